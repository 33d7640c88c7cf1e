"""Self-training loop for the answer-aware classifier.

Supervised warm-up on labeled data, then generations of: predict on the
not-yet-admitted unlabeled pool, admit samples with at least one class
passing the confidence gate (labels and masks frozen at admission), and
retrain on labeled + admitted with the full weighted loss.  Generations
stop when validation micro-F1 stops moving, nothing new is admitted, or
the generation cap is reached; the best-validation parameters win.

The trainer is the single writer of model parameters; admission of pseudo
samples is serialized per generation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint, validate_manifest
from .config import RunConfig
from .data import Dataset, DatasetKind, Sample, train_val_split
from .encoding import DocumentEncoder, EncodedBatch, encode_dataset
from .errors import DataFormatError, NumericalError
from .losses import (
    LossWeights,
    label_loss,
    masked_label_loss,
    quality_loss,
    total_loss,
)
from .metrics import confusion, micro_prf
from .qa_model import QAModel


@dataclass
class QATensors:
    """Torch views of an encoded dataset, indexable for minibatching."""

    ids: list[str]
    q_doc: torch.Tensor
    q_sent: torch.Tensor
    a_doc: torch.Tensor
    a_sent: torch.Tensor
    answer_mask: torch.Tensor
    best_flags: torch.Tensor
    labels: torch.Tensor | None = None
    label_masks: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, indices: np.ndarray) -> "QATensors":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return QATensors(
            ids=[self.ids[int(i)] for i in indices],
            q_doc=self.q_doc[idx],
            q_sent=self.q_sent[idx],
            a_doc=self.a_doc[idx],
            a_sent=self.a_sent[idx],
            answer_mask=self.answer_mask[idx],
            best_flags=self.best_flags[idx],
            labels=self.labels[idx] if self.labels is not None else None,
            label_masks=self.label_masks[idx] if self.label_masks is not None else None,
        )

    @staticmethod
    def from_encoded(batch: EncodedBatch) -> "QATensors":
        return QATensors(
            ids=list(batch.ids),
            q_doc=torch.from_numpy(batch.q_doc),
            q_sent=torch.from_numpy(batch.q_sent),
            a_doc=torch.from_numpy(batch.a_doc),
            a_sent=torch.from_numpy(batch.a_sent),
            answer_mask=torch.from_numpy(batch.answer_mask),
            best_flags=torch.from_numpy(batch.best_flags),
            labels=torch.from_numpy(batch.labels) if batch.labels is not None else None,
            label_masks=(
                torch.from_numpy(batch.label_masks)
                if batch.label_masks is not None
                else None
            ),
        )


@dataclass
class TrainState:
    """Trajectory of one self-training run."""

    generations_run: int = 0
    admitted_per_generation: list[int] = field(default_factory=list)
    pseudo_ids: list[str] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    best_generation: int = 0
    best_val_f1: float = 0.0
    log: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)  # state_dict per generation
    stop_reason: str = ""


def encode_for_training(
    dataset: Dataset, encoder: DocumentEncoder, cfg: RunConfig
) -> QATensors:
    batch = encode_dataset(encoder, dataset, cfg.encoder, cfg.data.max_answers)
    return QATensors.from_encoded(batch)


def build_qa_model(cfg: RunConfig, encoder: DocumentEncoder, seed: int) -> QAModel:
    torch.manual_seed(seed)
    return QAModel(
        dim=encoder.dim,
        n_classes=len(cfg.data.classes),
        model_cfg=cfg.model,
        grid=(cfg.encoder.max_q_sentences, cfg.encoder.max_a_sentences),
    )


def qa_manifest(cfg: RunConfig, encoder: DocumentEncoder) -> dict:
    return {
        "kind": "qa_model",
        "class_names": list(cfg.data.classes),
        "encoder": encoder.identity(),
        "grid": [cfg.encoder.max_q_sentences, cfg.encoder.max_a_sentences],
        "kernel_sizes": [list(p) for p in cfg.model.kernel_sizes],
        "filters": cfg.model.filters,
        "pool_size": cfg.model.pool_size,
        "max_answers": cfg.data.max_answers,
        "config_hash": cfg.config_hash(),
    }


def save_qa_checkpoint(path, model: QAModel, cfg: RunConfig, encoder: DocumentEncoder):
    return save_checkpoint(path, model.state_dict(), qa_manifest(cfg, encoder))


def load_qa_model(path, cfg: RunConfig, encoder: DocumentEncoder) -> QAModel:
    manifest, state = load_checkpoint(path)
    expected = qa_manifest(cfg, encoder)
    validate_manifest(
        manifest,
        {k: expected[k] for k in
         ("kind", "class_names", "encoder", "grid", "kernel_sizes", "filters",
          "pool_size", "max_answers")},
    )
    model = build_qa_model(cfg, encoder, seed=0)
    model.load_state_dict(state)
    model.eval()
    return model


def _make_optimizer(model: torch.nn.Module, cfg: RunConfig, epochs: int):
    trainer = cfg.trainer
    if trainer.optimizer == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=trainer.learning_rate)
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=trainer.learning_rate)
    if trainer.scheduler == "linear":
        scheduler = torch.optim.lr_scheduler.LinearLR(
            optimizer, start_factor=1.0, end_factor=0.1, total_iters=max(1, epochs)
        )
    else:
        scheduler = None
    return optimizer, scheduler


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _check_finite(value: torch.Tensor, context: str) -> None:
    if not torch.isfinite(value).all():
        raise NumericalError(f"non-finite loss during {context}: {value}")


def _fit(
    model: QAModel,
    labeled: QATensors,
    pseudo: QATensors | None,
    cfg: RunConfig,
    rng: np.random.Generator,
    max_epochs: int,
    context: str,
) -> list[dict]:
    """Minibatch training until the epoch loss change drops below epsilon.

    Labeled samples contribute the supervised term, pseudo samples the
    mask-gated term against their frozen labels, and both contribute the
    best-answer weight penalty.
    """
    weights_cfg = LossWeights(
        cfg.loss.lambda_label, cfg.loss.lambda_unlabel, cfg.loss.lambda_quality
    )
    eps = cfg.loss.prob_clamp
    n_l = len(labeled)
    n_p = len(pseudo) if pseudo is not None else 0
    if n_l + n_p == 0:
        raise DataFormatError(f"{context}: no training samples")
    optimizer, scheduler = _make_optimizer(model, cfg, max_epochs)
    history: list[dict] = []
    prev_loss: float | None = None

    model.train()
    for epoch in range(max_epochs):
        sums = {"label": 0.0, "unlabel": 0.0, "quality": 0.0, "total": 0.0}
        n_batches = 0
        for batch_idx in _batches(n_l + n_p, cfg.trainer.batch_size, rng):
            lab_idx = batch_idx[batch_idx < n_l]
            pse_idx = batch_idx[batch_idx >= n_l] - n_l

            label_term = torch.zeros(())
            quality_parts = []
            if lab_idx.size:
                part = labeled.take(lab_idx)
                probs, attn = model(
                    part.q_doc, part.q_sent, part.a_doc, part.a_sent, part.answer_mask
                )
                label_term = label_loss(part.labels, probs, eps)
                quality_parts.append((attn, part.best_flags, part.answer_mask))
            unlabel_term = torch.zeros(())
            if pse_idx.size:
                part = pseudo.take(pse_idx)
                probs, attn = model(
                    part.q_doc, part.q_sent, part.a_doc, part.a_sent, part.answer_mask
                )
                unlabel_term = masked_label_loss(
                    part.labels, part.label_masks, probs, eps
                )
                quality_parts.append((attn, part.best_flags, part.answer_mask))

            quality_term = torch.zeros(())
            if quality_parts:
                attn_all = torch.cat([q[0] for q in quality_parts], dim=0)
                best_all = torch.cat([q[1] for q in quality_parts], dim=0)
                mask_all = torch.cat([q[2] for q in quality_parts], dim=0)
                quality_term = quality_loss(attn_all, best_all, mask_all)

            breakdown = total_loss(
                label_term, unlabel_term, quality_term, weights_cfg,
                n_labeled=int(lab_idx.size), n_unlabeled=int(pse_idx.size),
            )
            _check_finite(breakdown.total, context)
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            for key, value in breakdown.detached().items():
                sums[key] += value
            n_batches += 1
        if scheduler is not None:
            scheduler.step()

        epoch_loss = sums["total"] / n_batches
        history.append(
            {
                "epoch": epoch,
                "label": sums["label"] / n_batches,
                "unlabel": sums["unlabel"] / n_batches,
                "quality": sums["quality"] / n_batches,
                "total": epoch_loss,
            }
        )
        if (
            epoch + 1 >= cfg.trainer.min_epochs
            and prev_loss is not None
            and abs(prev_loss - epoch_loss) < cfg.trainer.epsilon_loss
        ):
            break
        prev_loss = epoch_loss
    model.eval()
    return history


def warmup_train(
    d_l: Dataset,
    cfg: RunConfig,
    encoder: DocumentEncoder,
    seed: int | None = None,
    model: QAModel | None = None,
    tensors: QATensors | None = None,
) -> tuple[QAModel, list[dict]]:
    """Supervised training on labeled data (label + quality terms only)."""
    if len(d_l) == 0:
        raise DataFormatError("warm-up needs a non-empty labeled dataset")
    seed = cfg.seed if seed is None else seed
    torch.set_num_threads(cfg.trainer.num_threads)
    if model is None:
        model = build_qa_model(cfg, encoder, seed)
    if tensors is None:
        tensors = encode_for_training(d_l, encoder, cfg)
    rng = np.random.default_rng(seed)
    history = _fit(
        model, tensors, None, cfg, rng, cfg.trainer.warmup_epochs, "warm-up"
    )
    return model, history


def predict_probs(
    model: QAModel, tensors: QATensors, batch_size: int = 256
) -> np.ndarray:
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            idx = np.arange(start, min(start + batch_size, len(tensors)))
            part = tensors.take(idx)
            probs, _ = model(
                part.q_doc, part.q_sent, part.a_doc, part.a_sent, part.answer_mask
            )
            outputs.append(probs.numpy())
    if not outputs:
        return np.zeros((0, model.n_classes), dtype=np.float32)
    return np.concatenate(outputs, axis=0)


def pseudo_from_probs(probs: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Confidence gate and polarity rule applied classwise.

    Returns (labels, masks): mask is 1 where max(p, 1-p) >= tau; the label
    is 1 where p >= tau, 0 otherwise (placeholder 0 where mask is 0).
    """
    probs = np.asarray(probs, dtype=np.float64)
    confidence = np.maximum(probs, 1.0 - probs)
    masks = (confidence >= tau).astype(np.int64)
    labels = (probs >= tau).astype(np.int64)
    labels = labels * masks
    return labels, masks


def predict_pseudo(
    model: QAModel,
    d_u: Dataset,
    cfg: RunConfig,
    encoder: DocumentEncoder,
    tensors: QATensors | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Pseudo-label the unlabeled pool; admitted = at least one confident class.

    Returns the admitted samples as a pseudo dataset (answers retained,
    labels and masks attached) and the full probability matrix for audit.
    """
    if d_u.kind != DatasetKind.UNLABELED:
        raise DataFormatError("predict_pseudo expects an unlabeled dataset")
    if tensors is None:
        tensors = encode_for_training(d_u, encoder, cfg)
    probs = predict_probs(model, tensors)
    labels, masks = pseudo_from_probs(probs, cfg.loss.tau)
    admitted: list[Sample] = []
    for i, sample in enumerate(d_u.samples):
        if masks[i].any():
            admitted.append(
                Sample(
                    id=sample.id,
                    question_text=sample.question_text,
                    answers=sample.answers,
                    label=tuple(int(v) for v in labels[i]),
                    label_mask=tuple(int(v) for v in masks[i]),
                    provenance="pseudo",
                )
            )
    return Dataset(tuple(admitted), DatasetKind.PSEUDO, d_u.classes), probs


def _validation_f1(model: QAModel, tensors: QATensors, threshold: float) -> float:
    probs = predict_probs(model, tensors)
    y_pred = (probs >= threshold).astype(np.int64)
    y_true = tensors.labels.numpy().astype(np.int64)
    return micro_prf(confusion(y_true, y_pred)).f1


def self_train(
    d_l: Dataset,
    d_u: Dataset,
    cfg: RunConfig,
    encoder: DocumentEncoder,
) -> tuple[QAModel, TrainState]:
    """Warm-up plus confident-sample accretion until validation F1 settles.

    The admitted pseudo set only ever grows; a sample's label and mask are
    frozen the moment it is admitted.
    """
    torch.set_num_threads(cfg.trainer.num_threads)
    state = TrainState()
    d_train, d_val = train_val_split(d_l, cfg.trainer.val_fraction, cfg.seed)
    if len(d_train) == 0 or len(d_val) == 0:
        raise DataFormatError(
            f"labeled set of {len(d_l)} cannot support a validation split"
        )
    train_tensors = encode_for_training(d_train, encoder, cfg)
    val_tensors = encode_for_training(d_val, encoder, cfg)
    unlabeled_tensors = (
        encode_for_training(d_u, encoder, cfg) if len(d_u) else None
    )

    model, warmup_history = warmup_train(
        d_train, cfg, encoder, seed=cfg.seed, tensors=train_tensors
    )
    val_f1 = _validation_f1(model, val_tensors, cfg.eval.threshold)
    state.val_history.append(val_f1)
    state.best_generation = 0
    state.best_val_f1 = val_f1
    best_params = copy.deepcopy(model.state_dict())
    state.log.append(
        {
            "generation": 0,
            "admitted": 0,
            "pseudo_total": 0,
            "epochs": len(warmup_history),
            "final_loss": warmup_history[-1]["total"],
            "val_micro_f1": val_f1,
        }
    )
    state.snapshots.append(copy.deepcopy(model.state_dict()))

    remaining = np.arange(len(d_u))
    pseudo_samples: list[Sample] = []
    pseudo_tensor_rows: list[int] = []
    pseudo_labels: list[tuple[int, ...]] = []
    pseudo_masks: list[tuple[int, ...]] = []
    rng = np.random.default_rng(cfg.seed + 1)
    prev_f1 = val_f1
    stop_reason = "max_generations"

    for generation in range(1, cfg.trainer.max_generations + 1):
        admitted_now = 0
        if remaining.size:
            pool = unlabeled_tensors.take(remaining)
            probs = predict_probs(model, pool)
            labels, masks = pseudo_from_probs(probs, cfg.loss.tau)
            keep = masks.any(axis=1)
            for local_i in np.flatnonzero(keep):
                global_i = int(remaining[local_i])
                pseudo_tensor_rows.append(global_i)
                pseudo_labels.append(tuple(int(v) for v in labels[local_i]))
                pseudo_masks.append(tuple(int(v) for v in masks[local_i]))
                source = d_u.samples[global_i]
                pseudo_samples.append(
                    Sample(
                        id=source.id,
                        question_text=source.question_text,
                        answers=source.answers,
                        label=pseudo_labels[-1],
                        label_mask=pseudo_masks[-1],
                        provenance="pseudo",
                    )
                )
            admitted_now = int(keep.sum())
            remaining = remaining[~keep]
        state.admitted_per_generation.append(admitted_now)
        if admitted_now == 0:
            stop_reason = "no_new_admissions"
            break

        pseudo_tensors = unlabeled_tensors.take(np.asarray(pseudo_tensor_rows))
        pseudo_tensors.labels = torch.tensor(pseudo_labels, dtype=torch.float32)
        pseudo_tensors.label_masks = torch.tensor(pseudo_masks, dtype=torch.float32)

        history = _fit(
            model,
            train_tensors,
            pseudo_tensors,
            cfg,
            rng,
            cfg.trainer.inner_epochs,
            f"generation {generation}",
        )
        val_f1 = _validation_f1(model, val_tensors, cfg.eval.threshold)
        state.val_history.append(val_f1)
        state.generations_run = generation
        state.log.append(
            {
                "generation": generation,
                "admitted": admitted_now,
                "pseudo_total": len(pseudo_samples),
                "epochs": len(history),
                "final_loss": history[-1]["total"],
                "val_micro_f1": val_f1,
            }
        )
        state.snapshots.append(copy.deepcopy(model.state_dict()))
        if val_f1 >= state.best_val_f1:
            state.best_val_f1 = val_f1
            state.best_generation = generation
            best_params = copy.deepcopy(model.state_dict())
        if abs(val_f1 - prev_f1) < cfg.trainer.epsilon_generation:
            stop_reason = "validation_converged"
            break
        prev_f1 = val_f1

    state.stop_reason = stop_reason
    state.pseudo_ids = [s.id for s in pseudo_samples]
    model.load_state_dict(best_params)
    model.eval()
    return model, state
