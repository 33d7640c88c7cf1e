"""Synthetic separable corpus for offline runs, demos, and tests.

Questions are bags of class-specific keywords plus shared filler, split
into a few sentences; answers echo answer-side vocabulary for the active
classes, with the fully aligned answer flagged best.  Disjoint keyword
pools make the task learnable by construction while exercising every
pipeline stage, including the deliberate minority-class imbalance.
"""

from __future__ import annotations

import numpy as np

from .data import AnswerRecord, Dataset, DatasetKind, Sample

# Words shared between the informational and emotional question pools:
# such questions are genuinely ambiguous from text alone, and only the
# answers reveal which need was meant.
AMBIGUOUS_WORDS = ["stress", "coping", "sleepless", "struggling", "uncertain"]

QUESTION_KEYWORDS: dict[str, list[str]] = {
    "informational": [
        "treatment", "medication", "dosage", "diagnosis", "cause", "symptom",
        "test", "remedy", "advice", "recommend", "effective", "information",
    ] + AMBIGUOUS_WORDS,
    "emotional": [
        "scared", "lonely", "overwhelmed", "anxious", "crying", "hopeless",
        "worried", "devastated", "comfort", "afraid", "heartbroken", "despair",
    ] + AMBIGUOUS_WORDS,
    "network": [
        "group", "community", "meetup", "connect", "buddy", "peers",
        "forum", "join", "members", "gathering", "circle", "belong",
    ],
}

ANSWER_KEYWORDS: dict[str, list[str]] = {
    "informational": [
        "suggest", "recommend", "specialist", "research", "guideline",
        "consult", "evidence", "prescription",
    ],
    "emotional": [
        "sorry", "hugs", "understand", "strength", "courage", "gentle",
        "warm", "caring",
    ],
    "network": [
        "welcome", "together", "weekly", "everyone", "introduce", "nearby",
        "chapter", "fellowship",
    ],
}

FILLER = [
    "i", "have", "been", "my", "doctor", "said", "the", "since", "last",
    "week", "health", "condition", "about", "really", "just", "today",
]


def _pools_for(classes: tuple[str, ...]) -> tuple[dict, dict]:
    q_pools, a_pools = {}, {}
    for c, name in enumerate(classes):
        q_pools[name] = QUESTION_KEYWORDS.get(
            name, [f"{name}topic{i}" for i in range(12)]
        )
        a_pools[name] = ANSWER_KEYWORDS.get(
            name, [f"{name}reply{i}" for i in range(8)]
        )
    return q_pools, a_pools


def _combo_table(classes: tuple[str, ...], minority: str, minority_rate: float):
    """Label-combination distribution with the minority class held near the rate."""
    n = len(classes)
    m = classes.index(minority)
    combos, weights = [], []
    for bits in range(1, 2**n):
        combo = tuple((bits >> c) & 1 for c in range(n))
        if sum(combo) == n and n > 1:
            continue  # mirror the generation constraint: never all classes at once
        combos.append(combo)
    with_m = [c for c in combos if c[m] == 1]
    without_m = [c for c in combos if c[m] == 0]
    for combo in combos:
        if combo[m] == 1:
            base = minority_rate / len(with_m)
            weights.append(base * (1.5 if sum(combo) == 1 else 0.75))
        else:
            base = (1.0 - minority_rate) / len(without_m)
            weights.append(base * (1.4 if sum(combo) == 1 else 0.7))
    weights = np.asarray(weights, dtype=np.float64)
    return combos, weights / weights.sum()


def _make_text(
    rng: np.random.Generator,
    pools: dict[str, list[str]],
    classes: tuple[str, ...],
    combo: tuple[int, ...],
    words_per_class: tuple[int, int] = (3, 6),
    n_sentences: tuple[int, int] = (2, 4),
    filler_range: tuple[int, int] = (2, 5),
    distractor_prob: float = 0.0,
) -> str:
    words: list[str] = []
    for c, name in enumerate(classes):
        if combo[c]:
            take = int(rng.integers(*words_per_class))
            words.extend(rng.choice(pools[name], size=take, replace=True).tolist())
        elif distractor_prob > 0 and rng.random() < distractor_prob:
            # an off-topic keyword: text signal is imperfect, like real questions
            words.append(str(rng.choice(pools[name])))
    words.extend(rng.choice(FILLER, size=int(rng.integers(*filler_range)), replace=True).tolist())
    rng.shuffle(words)
    k = int(rng.integers(*n_sentences))
    chunks = np.array_split(np.array(words, dtype=object), min(k, len(words)))
    sentences = [" ".join(chunk.tolist()).capitalize() + "." for chunk in chunks if len(chunk)]
    return " ".join(sentences)


def _make_answers(
    rng: np.random.Generator,
    a_pools: dict[str, list[str]],
    classes: tuple[str, ...],
    combo: tuple[int, ...],
    k_answers: int,
) -> tuple[AnswerRecord, ...]:
    """Best answer speaks to every active need; distractors mostly do not."""
    answers: list[AnswerRecord] = []
    best_slot = int(rng.integers(0, k_answers))
    for slot in range(k_answers):
        if slot == best_slot:
            text = _make_text(
                rng, a_pools, classes, combo,
                words_per_class=(3, 6), n_sentences=(1, 3), filler_range=(1, 3),
            )
        elif rng.random() < 0.8:
            text = ""  # filler-only distractor, built below
        else:
            wrong = int(rng.integers(0, len(classes)))
            answer_combo = tuple(int(c == wrong) for c in range(len(classes)))
            text = _make_text(
                rng, a_pools, classes, answer_combo,
                words_per_class=(1, 3), n_sentences=(1, 2), filler_range=(1, 3),
            )
        if not text.strip():
            text = " ".join(
                rng.choice(FILLER, size=int(rng.integers(3, 6)), replace=True).tolist()
            ).capitalize() + "."
        answers.append(AnswerRecord(text=text, is_best=slot == best_slot))
    return tuple(answers)


def make_corpus(
    n_labeled: int,
    n_unlabeled: int,
    seed: int,
    classes: tuple[str, ...] = ("informational", "emotional", "network"),
    minority_class: str = "network",
    minority_rate: float = 0.10,
    answers_per_question: int = 3,
    words_per_class: tuple[int, int] = (2, 4),
    filler_range: tuple[int, int] = (3, 7),
    distractor_prob: float = 0.15,
) -> tuple[Dataset, Dataset]:
    """Return (labeled, unlabeled) datasets drawn from one distribution."""
    if minority_class not in classes:
        raise ValueError(f"minority class {minority_class!r} not in {classes}")
    rng = np.random.default_rng(seed)
    q_pools, a_pools = _pools_for(classes)
    combos, weights = _combo_table(classes, minority_class, minority_rate)

    def draw(sample_id: str, labeled: bool) -> Sample:
        combo = combos[int(rng.choice(len(combos), p=weights))]
        question = _make_text(
            rng, q_pools, classes, combo,
            words_per_class=words_per_class,
            filler_range=filler_range,
            distractor_prob=distractor_prob,
        )
        answers = _make_answers(rng, a_pools, classes, combo, answers_per_question)
        return Sample(
            id=sample_id,
            question_text=question,
            answers=answers,
            label=combo if labeled else None,
        )

    labeled = tuple(draw(f"syn-l-{i:05d}", True) for i in range(n_labeled))
    unlabeled = tuple(draw(f"syn-u-{i:05d}", False) for i in range(n_unlabeled))
    return (
        Dataset(labeled, DatasetKind.LABELED, classes),
        Dataset(unlabeled, DatasetKind.UNLABELED, classes),
    )
