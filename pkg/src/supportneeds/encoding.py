"""Text vectorization behind a pluggable port.

Two backends implement the same contract: a deterministic feature-hashing
stub (no downloads, value-identical across processes and platforms) and a
pretrained-transformer backend for real runs.  Both produce document-level
vectors; sentence-level matrices are built by applying the document encoder
per sentence and zero-padding to a fixed row count.

Encoding is pure given a loaded backend; backend handles are read-only
after load and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .config import EncoderConfig
from .data import Dataset, Sample
from .errors import ConfigError, EncoderError

# Trailing tokens (lowercased, final dot stripped) that do not end a sentence.
ABBREVIATIONS = frozenset(
    {"e.g", "i.e", "etc", "vs", "dr", "mr", "mrs", "ms", "prof", "fig", "st", "al"}
)

_BOUNDARY = re.compile(r"[.!?]+(?=\s|$)")
_TOKEN = re.compile(r"[a-z0-9]+")


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation, keeping the delimiter with its sentence.

    A ``.`` boundary is suppressed when the word before it is a known
    abbreviation (e.g. "e.g.", "Dr.").  Text without any boundary comes
    back as a single sentence.
    """
    if not text.strip():
        raise EncoderError("cannot split empty text")
    pieces: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        end = match.end()
        if text[end - 1] == "." and _is_abbreviation(text, match.start()):
            continue
        piece = text[start:end].strip()
        if piece:
            pieces.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces if pieces else [text.strip()]


def _is_abbreviation(text: str, dot_pos: int) -> bool:
    word_start = dot_pos
    while word_start > 0 and not text[word_start - 1].isspace():
        word_start -= 1
    word = text[word_start:dot_pos].lower().rstrip(".")
    return word in ABBREVIATIONS


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _stable_hash(data: str) -> int:
    return int.from_bytes(
        hashlib.blake2b(data.encode("utf-8"), digest_size=8).digest(), "big"
    )


class DocumentEncoder:
    """Port: maps non-empty text to a finite vector of fixed dimension."""

    dim: int

    def encode_document(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def identity(self) -> dict:
        """Fingerprint stored in checkpoint manifests."""
        raise NotImplementedError


class HashingEncoder(DocumentEncoder):
    """Deterministic bag-of-hashed-ngrams encoder (unit-norm output).

    Word unigrams and bigrams are hashed (keyed blake2b, no process salt)
    into ``dim`` signed buckets, then L2-normalized.  Pure and platform
    independent, so all downstream math is reproducible without model
    downloads.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ConfigError(f"encoder dim must be >= 1, got {dim}")
        self.dim = dim

    def encode_document(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise EncoderError(f"text is empty after normalization: {text!r}")
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            h = _stable_hash(gram)
            idx = h % self.dim
            sign = 1.0 if (h >> 63) & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # all buckets cancelled; fall back to a deterministic unit vector
            vec[_stable_hash(" ".join(tokens)) % self.dim] = 1.0
            norm = 1.0
        return (vec / norm).astype(np.float32)

    def identity(self) -> dict:
        return {"backend": "stub", "dim": self.dim}


class TransformerEncoder(DocumentEncoder):
    """Pretrained sentence-transformer backend for real runs.

    Loading is lazy; failures surface as EncoderError with the cause so
    offline environments fail loudly instead of silently degrading.
    """

    def __init__(self, model_id: str, dim: int | None = None):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as e:
            raise EncoderError(f"transformer backend unavailable: {e}") from e
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as e:
            raise EncoderError(f"cannot load encoder model {model_id!r}: {e}") from e
        self.model_id = model_id
        probed = int(self._model.get_sentence_embedding_dimension())
        if dim is not None and dim != probed:
            raise ConfigError(
                f"encoder.dim {dim} does not match model dimension {probed}"
            )
        self.dim = probed

    def encode_document(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EncoderError("cannot encode empty text")
        try:
            return np.asarray(
                self._model.encode(text, show_progress_bar=False), dtype=np.float32
            )
        except Exception as e:
            raise EncoderError(f"encoder backend failure: {e}") from e

    def identity(self) -> dict:
        return {"backend": "transformer", "dim": self.dim, "model_id": self.model_id}


def build_encoder(cfg: EncoderConfig) -> DocumentEncoder:
    if cfg.backend == "stub":
        return HashingEncoder(cfg.dim)
    if cfg.backend == "transformer":
        return TransformerEncoder(cfg.model_id, cfg.dim)
    raise ConfigError(f"unknown encoder backend: {cfg.backend!r}")


def encode_sentences(
    encoder: DocumentEncoder, text: str, max_sentences: int
) -> tuple[np.ndarray, int]:
    """Sentence-level matrix with exact zero padding.

    The first ``count`` rows hold sentence encodings; rows past the actual
    sentence count are exactly zero.  Inputs longer than ``max_sentences``
    are truncated.
    """
    if max_sentences < 1:
        raise ConfigError(f"max_sentences must be >= 1, got {max_sentences}")
    sentences = split_sentences(text)[:max_sentences]
    matrix = np.zeros((max_sentences, encoder.dim), dtype=np.float32)
    for i, sentence in enumerate(sentences):
        matrix[i] = encoder.encode_document(sentence)
    return matrix, len(sentences)


@dataclass
class EncodedSample:
    """Document- and sentence-level views of one sample.

    Answer-level arrays are padded to ``max_answers`` slots; ``answer_mask``
    marks the real ones.  Padded rows of every matrix are exactly zero.
    """

    sample_id: str
    q_doc: np.ndarray              # (d,)
    q_sent: np.ndarray             # (m, d)
    q_sent_count: int
    a_doc: np.ndarray              # (K, d)
    a_sent: np.ndarray             # (K, n, d)
    a_sent_count: tuple[int, ...]  # per answer slot
    answer_mask: np.ndarray        # (K,) bool, True for real answers
    best_flags: np.ndarray         # (K,) bool
    label: tuple[int, ...] | None = None
    label_mask: tuple[int, ...] | None = None


def encode_sample(
    encoder: DocumentEncoder,
    sample: Sample,
    cfg: EncoderConfig,
    max_answers: int,
) -> EncodedSample:
    d = encoder.dim
    m, n = cfg.max_q_sentences, cfg.max_a_sentences
    k_slots = max_answers

    q_doc = encoder.encode_document(sample.question_text)
    q_sent, q_count = encode_sentences(encoder, sample.question_text, m)

    a_doc = np.zeros((k_slots, d), dtype=np.float32)
    a_sent = np.zeros((k_slots, n, d), dtype=np.float32)
    a_counts = [0] * k_slots
    mask = np.zeros(k_slots, dtype=bool)
    best = np.zeros(k_slots, dtype=bool)
    for k, answer in enumerate(sample.answers[:k_slots]):
        a_doc[k] = encoder.encode_document(answer.text)
        a_sent[k], a_counts[k] = encode_sentences(encoder, answer.text, n)
        mask[k] = True
        best[k] = answer.is_best

    return EncodedSample(
        sample_id=sample.id,
        q_doc=q_doc,
        q_sent=q_sent,
        q_sent_count=q_count,
        a_doc=a_doc,
        a_sent=a_sent,
        a_sent_count=tuple(a_counts),
        answer_mask=mask,
        best_flags=best,
        label=sample.label,
        label_mask=sample.label_mask,
    )


@dataclass
class EncodedBatch:
    """Stacked arrays for a whole dataset, encoded once and reused."""

    ids: list[str] = field(default_factory=list)
    q_doc: np.ndarray = None          # (N, d)
    q_sent: np.ndarray = None         # (N, m, d)
    a_doc: np.ndarray = None          # (N, K, d)
    a_sent: np.ndarray = None         # (N, K, n, d)
    answer_mask: np.ndarray = None    # (N, K)
    best_flags: np.ndarray = None     # (N, K)
    labels: np.ndarray | None = None      # (N, C) float32
    label_masks: np.ndarray | None = None  # (N, C) float32

    def __len__(self) -> int:
        return len(self.ids)


def encode_dataset(
    encoder: DocumentEncoder,
    dataset: Dataset,
    cfg: EncoderConfig,
    max_answers: int,
) -> EncodedBatch:
    encoded = [encode_sample(encoder, s, cfg, max_answers) for s in dataset]
    n_classes = len(dataset.classes)
    batch = EncodedBatch(ids=[e.sample_id for e in encoded])
    batch.q_doc = np.stack([e.q_doc for e in encoded]) if encoded else np.zeros((0, encoder.dim), np.float32)
    batch.q_sent = np.stack([e.q_sent for e in encoded]) if encoded else np.zeros((0, cfg.max_q_sentences, encoder.dim), np.float32)
    batch.a_doc = np.stack([e.a_doc for e in encoded]) if encoded else np.zeros((0, max_answers, encoder.dim), np.float32)
    batch.a_sent = np.stack([e.a_sent for e in encoded]) if encoded else np.zeros((0, max_answers, cfg.max_a_sentences, encoder.dim), np.float32)
    batch.answer_mask = np.stack([e.answer_mask for e in encoded]) if encoded else np.zeros((0, max_answers), bool)
    batch.best_flags = np.stack([e.best_flags for e in encoded]) if encoded else np.zeros((0, max_answers), bool)
    if all(e.label is not None for e in encoded) and encoded:
        batch.labels = np.array([e.label for e in encoded], dtype=np.float32)
        batch.label_masks = np.array(
            [e.label_mask if e.label_mask is not None else (1,) * n_classes for e in encoded],
            dtype=np.float32,
        )
    return batch
