"""Question-only classifier trained on the fused dataset.

Tokens are hashed into a fixed bucket vocabulary, embedded, run through a
bidirectional LSTM, and the concatenated final states feed a linear head
with per-class sigmoids.  Trained with the supervised loss only; inference
is pure and deterministic for fixed parameters.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, save_checkpoint, validate_manifest
from .config import RunConfig
from .data import Dataset, DatasetKind
from .encoding import tokenize
from .errors import DataFormatError, EncoderError, NumericalError
from .losses import label_loss


PAD_ID = 0


def token_ids(text: str, vocab_buckets: int, max_tokens: int) -> list[int]:
    """Hash tokens into [1, vocab_buckets); 0 is reserved for padding."""
    tokens = tokenize(text)[:max_tokens]
    if not tokens:
        raise EncoderError(f"text has no tokens after normalization: {text!r}")
    ids = []
    for token in tokens:
        h = int.from_bytes(
            hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big"
        )
        ids.append(1 + h % (vocab_buckets - 1))
    return ids


def batch_token_ids(
    texts: list[str], vocab_buckets: int, max_tokens: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """(N, T) padded id matrix plus (N,) lengths."""
    seqs = [token_ids(t, vocab_buckets, max_tokens) for t in texts]
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    lengths = torch.zeros(len(seqs), dtype=torch.long)
    for i, seq in enumerate(seqs):
        ids[i, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        lengths[i] = len(seq)
    return ids, lengths


class QModel(nn.Module):
    def __init__(
        self,
        n_classes: int,
        hidden_size: int = 256,
        embed_dim: int = 64,
        vocab_buckets: int = 4096,
        max_tokens: int = 64,
    ):
        super().__init__()
        self.n_classes = n_classes
        self.vocab_buckets = vocab_buckets
        self.max_tokens = max_tokens
        self.embedding = nn.Embedding(vocab_buckets, embed_dim, padding_idx=PAD_ID)
        self.lstm = nn.LSTM(
            embed_dim, hidden_size, num_layers=1, bidirectional=True, batch_first=True
        )
        self.head = nn.Linear(2 * hidden_size, n_classes)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        embedded = self.embedding(ids)
        packed = nn.utils.rnn.pack_padded_sequence(
            embedded, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.lstm(packed)
        final = torch.cat([h_n[0], h_n[1]], dim=-1)
        return torch.sigmoid(self.head(final))


def build_q_model(cfg: RunConfig, seed: int) -> QModel:
    torch.manual_seed(seed)
    return QModel(
        n_classes=len(cfg.data.classes),
        hidden_size=cfg.qmodel.hidden_size,
        embed_dim=cfg.qmodel.embed_dim,
        vocab_buckets=cfg.qmodel.vocab_buckets,
        max_tokens=cfg.qmodel.max_tokens,
    )


def q_manifest(cfg: RunConfig) -> dict:
    return {
        "kind": "q_model",
        "class_names": list(cfg.data.classes),
        "hidden_size": cfg.qmodel.hidden_size,
        "embed_dim": cfg.qmodel.embed_dim,
        "vocab_buckets": cfg.qmodel.vocab_buckets,
        "max_tokens": cfg.qmodel.max_tokens,
        "config_hash": cfg.config_hash(),
    }


def save_q_checkpoint(path, model: QModel, cfg: RunConfig):
    return save_checkpoint(path, model.state_dict(), q_manifest(cfg))


def load_q_model(path, cfg: RunConfig) -> QModel:
    manifest, state = load_checkpoint(path)
    expected = q_manifest(cfg)
    validate_manifest(
        manifest,
        {k: expected[k] for k in
         ("kind", "class_names", "hidden_size", "embed_dim", "vocab_buckets",
          "max_tokens")},
    )
    model = build_q_model(cfg, seed=0)
    model.load_state_dict(state)
    model.eval()
    return model


def train_q(
    d_f: Dataset, cfg: RunConfig, seed: int | None = None
) -> tuple[QModel, list[dict]]:
    """Fit the question-only classifier on a fully labeled fused dataset."""
    if len(d_f) == 0:
        raise DataFormatError("cannot train the question model on an empty dataset")
    if d_f.kind not in (DatasetKind.FUSED, DatasetKind.LABELED):
        raise DataFormatError(f"expected a fused or labeled dataset, got {d_f.kind.value}")
    seed = cfg.seed if seed is None else seed
    torch.set_num_threads(cfg.trainer.num_threads)
    model = build_q_model(cfg, seed)

    ids, lengths = batch_token_ids(
        [s.question_text for s in d_f], cfg.qmodel.vocab_buckets, cfg.qmodel.max_tokens
    )
    labels = torch.tensor(d_f.labels_array(), dtype=torch.float32)

    if cfg.trainer.optimizer == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.trainer.learning_rate)
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=cfg.trainer.learning_rate)
    scheduler = None
    if cfg.trainer.scheduler == "linear":
        scheduler = torch.optim.lr_scheduler.LinearLR(
            optimizer, start_factor=1.0, end_factor=0.1,
            total_iters=max(1, cfg.trainer.q_epochs),
        )

    rng = np.random.default_rng(seed)
    history: list[dict] = []
    prev_loss: float | None = None
    model.train()
    for epoch in range(cfg.trainer.q_epochs):
        order = rng.permutation(len(d_f))
        epoch_sum, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.trainer.batch_size):
            idx = torch.as_tensor(order[start : start + cfg.trainer.batch_size])
            probs = model(ids[idx], lengths[idx])
            loss = label_loss(labels[idx], probs, cfg.loss.prob_clamp)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss in epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_sum += float(loss.detach())
            n_batches += 1
        if scheduler is not None:
            scheduler.step()
        epoch_loss = epoch_sum / n_batches
        history.append({"epoch": epoch, "loss": epoch_loss})
        if (
            epoch + 1 >= cfg.trainer.min_epochs
            and prev_loss is not None
            and abs(prev_loss - epoch_loss) < cfg.trainer.epsilon_loss
        ):
            break
        prev_loss = epoch_loss
    model.eval()
    return model, history


def predict_probs_q(model: QModel, texts: list[str], batch_size: int = 256) -> np.ndarray:
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            ids, lengths = batch_token_ids(chunk, model.vocab_buckets, model.max_tokens)
            outputs.append(model(ids, lengths).numpy())
    if not outputs:
        return np.zeros((0, model.n_classes), dtype=np.float32)
    return np.concatenate(outputs, axis=0)


def predict(
    model: QModel, question_text: str, threshold: float = 0.5
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Probability triple plus thresholded hard labels for one question."""
    if not question_text.strip():
        raise EncoderError("cannot classify an empty question")
    probs = predict_probs_q(model, [question_text])[0]
    labels = tuple(int(p >= threshold) for p in probs)
    return probs, labels
