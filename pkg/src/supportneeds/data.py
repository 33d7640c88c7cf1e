"""Samples, label vectors, dataset partitions, and the on-disk record format.

One record per line, UTF-8 JSON: ``id`` (string), ``question`` (string),
``answers`` (array of ``{text, is_best}``), optional ``labels`` (array of
0/1 per class, order fixed by the configured class list).  Pseudo-labeled
records additionally carry ``mask`` and ``all_confident``; augmented records
may carry score fields and ``provenance``.

Datasets are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError

DEFAULT_CLASSES = ("informational", "emotional", "network")


class DatasetKind(enum.Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    PSEUDO = "pseudo"
    AUGMENTED = "augmented"
    SELECTED = "selected"
    FUSED = "fused"


def check_label_vector(values: Sequence[int], n_classes: int) -> tuple[int, ...]:
    """Validate a multi-hot label vector; entries must be exactly 0 or 1."""
    vec = tuple(values)
    if len(vec) != n_classes:
        raise DataFormatError(
            f"label vector has {len(vec)} entries, expected {n_classes}"
        )
    if any(v not in (0, 1) for v in vec):
        raise DataFormatError(f"label vector entries must be 0 or 1, got {vec}")
    return tuple(int(v) for v in vec)


@dataclass(frozen=True)
class AnswerRecord:
    text: str
    is_best: bool = False


@dataclass(frozen=True)
class Sample:
    """One question with its answers and (optionally) labels.

    ``label_mask`` marks per-class confidence for pseudo-labeled samples:
    1 means the class passed the confidence gate at admission, 0 means the
    label entry is a placeholder that must not be trained against.
    """

    id: str
    question_text: str
    answers: tuple[AnswerRecord, ...] = ()
    label: tuple[int, ...] | None = None
    label_mask: tuple[int, ...] | None = None
    provenance: str | None = None

    @property
    def best_index(self) -> int | None:
        for k, answer in enumerate(self.answers):
            if answer.is_best:
                return k
        return None

    @property
    def all_confident(self) -> bool:
        return self.label_mask is not None and all(m == 1 for m in self.label_mask)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    kind: DatasetKind
    classes: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self) -> None:
        for sample in self.samples:
            _check_kind_invariants(sample, self.kind, len(self.classes))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def labels_array(self) -> np.ndarray:
        if any(s.label is None for s in self.samples):
            raise DataFormatError(f"{self.kind.value} dataset has unlabeled members")
        return np.array([s.label for s in self.samples], dtype=np.int64)


def _check_kind_invariants(sample: Sample, kind: DatasetKind, n_classes: int) -> None:
    best_count = sum(1 for a in sample.answers if a.is_best)
    if best_count > 1:
        raise DataFormatError(f"sample {sample.id}: more than one best answer")
    if not sample.question_text.strip():
        raise DataFormatError(f"sample {sample.id}: empty question text")
    if sample.label is not None:
        check_label_vector(sample.label, n_classes)
    if sample.label_mask is not None:
        check_label_vector(sample.label_mask, n_classes)

    if kind in (DatasetKind.LABELED, DatasetKind.FUSED):
        if sample.label is None:
            raise DataFormatError(f"sample {sample.id}: {kind.value} sample without label")
    elif kind == DatasetKind.UNLABELED:
        if sample.label is not None or sample.label_mask is not None:
            raise DataFormatError(f"sample {sample.id}: unlabeled sample carries labels")
    elif kind == DatasetKind.PSEUDO:
        if sample.label is None or sample.label_mask is None:
            raise DataFormatError(
                f"sample {sample.id}: pseudo sample needs label and mask"
            )
    elif kind in (DatasetKind.AUGMENTED, DatasetKind.SELECTED):
        if sample.label is None:
            raise DataFormatError(f"sample {sample.id}: augmented sample without label")


@dataclass
class ParseDiagnostics:
    """Per-line rejection reasons and drop counters from one parse pass."""

    rejected: list[tuple[int, str]]
    dropped_missing_best: int = 0

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def record_to_sample(raw: dict, n_classes: int) -> Sample:
    if not isinstance(raw, dict):
        raise DataFormatError("record is not an object")
    try:
        sample_id = str(raw["id"])
        question = raw["question"]
        answers_raw = raw.get("answers", [])
    except KeyError as e:
        raise DataFormatError(f"missing required field {e.args[0]!r}") from e
    if not isinstance(question, str) or not question.strip():
        raise DataFormatError("field 'question' must be a non-empty string")
    if not isinstance(answers_raw, list):
        raise DataFormatError("field 'answers' must be an array")
    answers = []
    for a in answers_raw:
        if not isinstance(a, dict) or not isinstance(a.get("text"), str) or not a["text"].strip():
            raise DataFormatError("answer entries need a non-empty 'text' string")
        answers.append(AnswerRecord(text=a["text"], is_best=bool(a.get("is_best", False))))

    label = raw.get("labels")
    mask = raw.get("mask")
    return Sample(
        id=sample_id,
        question_text=question,
        answers=tuple(answers),
        label=check_label_vector(label, n_classes) if label is not None else None,
        label_mask=check_label_vector(mask, n_classes) if mask is not None else None,
        provenance=raw.get("provenance"),
    )


def sample_to_record(sample: Sample) -> dict:
    record: dict = {
        "id": sample.id,
        "question": sample.question_text,
        "answers": [{"text": a.text, "is_best": a.is_best} for a in sample.answers],
    }
    if sample.label is not None:
        record["labels"] = list(sample.label)
    if sample.label_mask is not None:
        record["mask"] = list(sample.label_mask)
        record["all_confident"] = sample.all_confident
    if sample.provenance is not None:
        record["provenance"] = sample.provenance
    return record


def parse_dataset(
    lines: Iterable[str],
    kind: DatasetKind,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    max_answers: int = 5,
) -> tuple[Dataset, ParseDiagnostics]:
    """Parse a line-delimited record stream into a Dataset.

    Records violating the schema are rejected with a per-line diagnostic.
    For labeled/unlabeled kinds, samples lacking a best-answer flag are
    dropped and counted.  An empty stream is an error.
    """
    samples: list[Sample] = []
    diagnostics = ParseDiagnostics(rejected=[])
    n_lines = 0
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        n_lines += 1
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as e:
            diagnostics.rejected.append((line_no, f"invalid JSON: {e.msg}"))
            continue
        try:
            sample = record_to_sample(raw, len(classes))
            _check_kind_invariants(sample, kind, len(classes))
        except DataFormatError as e:
            diagnostics.rejected.append((line_no, str(e)))
            continue
        if kind in (DatasetKind.LABELED, DatasetKind.UNLABELED):
            if sample.best_index is None:
                diagnostics.dropped_missing_best += 1
                continue
        samples.append(cap_answers(sample, max_answers))

    if n_lines == 0:
        raise DataFormatError("empty dataset stream")
    return Dataset(tuple(samples), kind, classes), diagnostics


def cap_answers(sample: Sample, max_answers: int) -> Sample:
    """Keep the best answer plus the first answers in original order."""
    if len(sample.answers) <= max_answers:
        return sample
    best = sample.best_index
    keep: list[int] = [] if best is None else [best]
    for k in range(len(sample.answers)):
        if len(keep) >= max_answers:
            break
        if k != best:
            keep.append(k)
    keep.sort()
    return replace(sample, answers=tuple(sample.answers[k] for k in keep))


def load_dataset_file(
    path: str | Path,
    kind: DatasetKind,
    classes: tuple[str, ...] = DEFAULT_CLASSES,
    max_answers: int = 5,
) -> tuple[Dataset, ParseDiagnostics]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset file not found: {p}")
    with p.open("r", encoding="utf-8") as f:
        return parse_dataset(f, kind, classes, max_answers)


def serialize_dataset(dataset: Dataset) -> str:
    """Canonical line-delimited form; parse(serialize(d)) round-trips."""
    lines = [
        json.dumps(sample_to_record(s), ensure_ascii=False, sort_keys=True)
        for s in dataset.samples
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def write_dataset_file(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(serialize_dataset(dataset), encoding="utf-8")


def split_kfold(
    dataset: Dataset, folds: int, seed: int
) -> list[tuple[Dataset, Dataset]]:
    """Disjoint, exhaustive k-fold partition; fold sizes differ by at most 1."""
    if folds < 2:
        raise DataFormatError(f"folds must be >= 2, got {folds}")
    if folds > len(dataset):
        raise DataFormatError(
            f"cannot split {len(dataset)} samples into {folds} folds"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    chunks = np.array_split(order, folds)
    out: list[tuple[Dataset, Dataset]] = []
    for test_idx in chunks:
        test_set = set(int(i) for i in test_idx)
        train = tuple(s for i, s in enumerate(dataset.samples) if i not in test_set)
        test = tuple(dataset.samples[int(i)] for i in sorted(test_set))
        out.append(
            (
                Dataset(train, dataset.kind, dataset.classes),
                Dataset(test, dataset.kind, dataset.classes),
            )
        )
    return out


def train_val_split(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out a validation slice (at least one sample when possible)."""
    n = len(dataset)
    n_val = max(1, int(round(n * val_fraction))) if n > 1 else 0
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    val_idx = set(int(i) for i in order[:n_val])
    train = tuple(s for i, s in enumerate(dataset.samples) if i not in val_idx)
    val = tuple(dataset.samples[int(i)] for i in sorted(val_idx))
    return (
        Dataset(train, dataset.kind, dataset.classes),
        Dataset(val, dataset.kind, dataset.classes),
    )


def fuse(
    d_l: Dataset, d_u_star: Dataset | None, d_a_star: Dataset | None
) -> tuple[Dataset, int]:
    """Merge real, pseudo, and selected-augmented samples for Q-model training.

    Every member must carry a label; pseudo samples must be confident in
    all classes (partially confident samples are excluded and counted,
    they contribute to the SSL loss only).  Answers are stripped and each
    sample is tagged with its provenance.
    """
    classes = d_l.classes
    fused: list[Sample] = []
    excluded = 0

    def strip(sample: Sample, provenance: str) -> Sample:
        return Sample(
            id=sample.id,
            question_text=sample.question_text,
            answers=(),
            label=sample.label,
            label_mask=None,
            provenance=provenance,
        )

    for sample in d_l:
        if sample.label is None:
            raise DataFormatError(f"fuse: labeled member {sample.id} has no label")
        fused.append(strip(sample, "labeled"))
    if d_u_star is not None:
        for sample in d_u_star:
            if sample.label is None:
                raise DataFormatError(f"fuse: pseudo member {sample.id} has no label")
            if not sample.all_confident:
                excluded += 1
                continue
            fused.append(strip(sample, "pseudo"))
    if d_a_star is not None:
        for sample in d_a_star:
            if sample.label is None:
                raise DataFormatError(f"fuse: augmented member {sample.id} has no label")
            fused.append(strip(sample, "augmented"))

    return Dataset(tuple(fused), DatasetKind.FUSED, classes), excluded
