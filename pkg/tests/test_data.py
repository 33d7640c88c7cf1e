import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supportneeds.data import (
    AnswerRecord,
    Dataset,
    DatasetKind,
    Sample,
    cap_answers,
    fuse,
    parse_dataset,
    serialize_dataset,
    split_kfold,
    train_val_split,
)
from supportneeds.errors import DataFormatError


def record(i, labels=None, answers=1, best=0, **extra):
    rec = {
        "id": f"s{i}",
        "question": f"question number {i} about health?",
        "answers": [
            {"text": f"answer {k} for {i}", "is_best": k == best}
            for k in range(answers)
        ],
    }
    if labels is not None:
        rec["labels"] = labels
    rec.update(extra)
    return json.dumps(rec)


class TestParseDataset:
    def test_multi_hot_labels(self):
        ds, diag = parse_dataset([record(0, labels=[1, 1, 0])], DatasetKind.LABELED)
        assert len(ds) == 1
        assert ds.samples[0].label == (1, 1, 0)
        assert diag.n_rejected == 0

    def test_zero_answer_unlabeled_sample_dropped_and_counted(self):
        ds, diag = parse_dataset(
            [record(0, answers=0), record(1)], DatasetKind.UNLABELED
        )
        assert len(ds) == 1
        assert diag.dropped_missing_best == 1

    def test_missing_best_flag_dropped(self):
        rec = {
            "id": "x",
            "question": "anything?",
            "answers": [{"text": "no best flag here", "is_best": False}],
            "labels": [1, 0, 0],
        }
        ds, diag = parse_dataset([json.dumps(rec)], DatasetKind.LABELED)
        assert len(ds) == 0
        assert diag.dropped_missing_best == 1

    def test_1500_well_formed_records(self):
        lines = [record(i, labels=[1, 0, 0]) for i in range(1500)]
        ds, diag = parse_dataset(lines, DatasetKind.LABELED)
        assert len(ds) == 1500
        assert diag.n_rejected == 0

    def test_malformed_line_reports_line_number(self):
        ds, diag = parse_dataset(
            [record(0, labels=[1, 0, 0]), "{not json", record(2, labels=[0, 1, 0])],
            DatasetKind.LABELED,
        )
        assert len(ds) == 2
        assert diag.n_rejected == 1
        line_no, reason = diag.rejected[0]
        assert line_no == 2
        assert "JSON" in reason

    def test_empty_stream_is_an_error(self):
        with pytest.raises(DataFormatError, match="empty"):
            parse_dataset([], DatasetKind.LABELED)
        with pytest.raises(DataFormatError, match="empty"):
            parse_dataset(["", "   "], DatasetKind.LABELED)

    def test_two_best_answers_rejected(self):
        rec = {
            "id": "x",
            "question": "anything?",
            "answers": [
                {"text": "a", "is_best": True},
                {"text": "b", "is_best": True},
            ],
            "labels": [1, 0, 0],
        }
        ds, diag = parse_dataset([json.dumps(rec)], DatasetKind.LABELED)
        assert len(ds) == 0
        assert diag.n_rejected == 1

    def test_bad_label_vector_rejected(self):
        ds, diag = parse_dataset(
            [record(0, labels=[1, 0]), record(1, labels=[2, 0, 0])],
            DatasetKind.LABELED,
        )
        assert len(ds) == 0
        assert diag.n_rejected == 2

    def test_labeled_sample_on_unlabeled_stream_rejected(self):
        ds, diag = parse_dataset([record(0, labels=[1, 0, 0])], DatasetKind.UNLABELED)
        assert len(ds) == 0
        assert diag.n_rejected == 1


class TestAnswerCap:
    def test_keeps_best_plus_first_others_in_order(self):
        sample = Sample(
            id="s",
            question_text="q?",
            answers=tuple(
                AnswerRecord(text=f"a{k}", is_best=k == 5) for k in range(7)
            ),
            label=(1, 0, 0),
        )
        capped = cap_answers(sample, 5)
        assert [a.text for a in capped.answers] == ["a0", "a1", "a2", "a3", "a5"]
        assert capped.best_index == 4

    def test_no_cap_needed(self):
        sample = Sample(
            id="s", question_text="q?",
            answers=(AnswerRecord("a", True),), label=(1, 0, 0),
        )
        assert cap_answers(sample, 5) is sample


class TestRoundTrip:
    def test_serialize_parse_serialize_is_identity(self):
        lines = [
            record(0, labels=[1, 1, 0]),
            record(1, labels=[0, 0, 1], answers=3, best=2),
        ]
        ds, _ = parse_dataset(lines, DatasetKind.LABELED)
        text = serialize_dataset(ds)
        ds2, diag = parse_dataset(text.splitlines(), DatasetKind.LABELED)
        assert diag.n_rejected == 0
        assert serialize_dataset(ds2) == text

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.text(alphabet="abcdef ?", min_size=1).filter(str.strip),
                st.lists(st.sampled_from([0, 1]), min_size=3, max_size=3),
            ),
            min_size=1,
            max_size=5,
        )
    )
    def test_round_trip_property(self, rows):
        samples = tuple(
            Sample(
                id=f"s{i}",
                question_text=text,
                answers=(AnswerRecord("an answer", is_best=True),),
                label=tuple(label),
            )
            for i, (text, label) in enumerate(rows)
        )
        ds = Dataset(samples, DatasetKind.LABELED)
        text = serialize_dataset(ds)
        ds2, _ = parse_dataset(text.splitlines(), DatasetKind.LABELED)
        assert serialize_dataset(ds2) == text


def _labeled(n, classes=("informational", "emotional", "network")):
    samples = tuple(
        Sample(
            id=f"s{i}",
            question_text=f"question {i}?",
            answers=(AnswerRecord(f"answer {i}", is_best=True),),
            label=(1, 0, 0),
        )
        for i in range(n)
    )
    return Dataset(samples, DatasetKind.LABELED, classes)


class TestKFold:
    def test_1500_by_10_gives_150_per_fold(self):
        ds = _labeled(1500)
        folds = split_kfold(ds, 10, seed=3)
        sizes = [len(test) for _, test in folds]
        assert sizes == [150] * 10
        assert sum(sizes) == len(ds)

    def test_leave_one_out(self):
        ds = _labeled(7)
        folds = split_kfold(ds, 7, seed=0)
        assert all(len(test) == 1 for _, test in folds)

    def test_determinism(self):
        ds = _labeled(30)
        a = split_kfold(ds, 5, seed=42)
        b = split_kfold(ds, 5, seed=42)
        assert [t.ids() for _, t in a] == [t.ids() for _, t in b]

    def test_partition_property(self):
        ds = _labeled(23)
        folds = split_kfold(ds, 4, seed=9)
        all_test_ids = [i for _, test in folds for i in test.ids()]
        assert sorted(all_test_ids) == sorted(ds.ids())
        for train, test in folds:
            assert set(train.ids()).isdisjoint(test.ids())
            assert sorted(train.ids() + test.ids()) == sorted(ds.ids())
        sizes = [len(t) for _, t in folds]
        assert max(sizes) - min(sizes) <= 1

    def test_too_many_folds(self):
        with pytest.raises(DataFormatError):
            split_kfold(_labeled(3), 4, seed=0)


def _pseudo(i, mask=(1, 1, 1)):
    return Sample(
        id=f"p{i}",
        question_text=f"pseudo question {i}?",
        answers=(AnswerRecord("a", is_best=True),),
        label=(0, 1, 0),
        label_mask=mask,
    )


def _augmented(i):
    return Sample(
        id=f"a{i}", question_text=f"generated question {i}?",
        answers=(), label=(0, 0, 1),
    )


class TestFuse:
    def test_sizes_add_up(self):
        d_l = _labeled(10)
        d_u = Dataset(tuple(_pseudo(i) for i in range(5)), DatasetKind.PSEUDO)
        d_a = Dataset(tuple(_augmented(i) for i in range(3)), DatasetKind.SELECTED)
        fused, excluded = fuse(d_l, d_u, d_a)
        assert len(fused) == 18
        assert excluded == 0
        assert fused.kind == DatasetKind.FUSED

    def test_empty_pseudo_and_augmented(self):
        d_l = _labeled(4)
        fused, _ = fuse(d_l, None, None)
        assert len(fused) == 4
        assert [s.question_text for s in fused] == [s.question_text for s in d_l]

    def test_partial_mask_excluded_and_counted(self):
        d_l = _labeled(2)
        d_u = Dataset(
            (_pseudo(0), _pseudo(1, mask=(1, 0, 1))), DatasetKind.PSEUDO
        )
        fused, excluded = fuse(d_l, d_u, None)
        assert len(fused) == 3
        assert excluded == 1
        assert "p1" not in fused.ids()

    def test_answers_stripped_and_provenance_tagged(self):
        d_l = _labeled(1)
        d_u = Dataset((_pseudo(0),), DatasetKind.PSEUDO)
        d_a = Dataset((_augmented(0),), DatasetKind.SELECTED)
        fused, _ = fuse(d_l, d_u, d_a)
        assert all(s.answers == () for s in fused)
        assert [s.provenance for s in fused] == ["labeled", "pseudo", "augmented"]

    def test_every_member_fully_labeled(self):
        d_l = _labeled(3)
        d_u = Dataset(tuple(_pseudo(i) for i in range(2)), DatasetKind.PSEUDO)
        fused, _ = fuse(d_l, d_u, None)
        assert all(s.label is not None and len(s.label) == 3 for s in fused)


class TestKindInvariants:
    def test_unlabeled_with_label_rejected(self):
        with pytest.raises(DataFormatError):
            Dataset(
                (Sample(id="x", question_text="q?", label=(1, 0, 0)),),
                DatasetKind.UNLABELED,
            )

    def test_pseudo_without_mask_rejected(self):
        with pytest.raises(DataFormatError):
            Dataset(
                (Sample(id="x", question_text="q?", label=(1, 0, 0)),),
                DatasetKind.PSEUDO,
            )

    def test_fused_without_label_rejected(self):
        with pytest.raises(DataFormatError):
            Dataset((Sample(id="x", question_text="q?"),), DatasetKind.FUSED)


class TestTrainValSplit:
    def test_split_sizes_and_determinism(self):
        ds = _labeled(20)
        train1, val1 = train_val_split(ds, 0.1, seed=5)
        train2, val2 = train_val_split(ds, 0.1, seed=5)
        assert len(val1) == 2 and len(train1) == 18
        assert val1.ids() == val2.ids() and train1.ids() == train2.ids()
        assert sorted(train1.ids() + val1.ids()) == sorted(ds.ids())
