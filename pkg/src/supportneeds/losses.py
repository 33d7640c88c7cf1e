"""Loss components for the answer-aware classifier and their weighted total.

All pieces are differentiable torch expressions.  Pseudo-targets and
confidence gates are derived from detached probabilities, so no gradient
flows through them.  Pure functions of their inputs; safe to evaluate
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigError, NumericalError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_label: float = 1.0
    lambda_unlabel: float = 1.0
    lambda_quality: float = 1.0

    def __post_init__(self) -> None:
        for name in ("lambda_label", "lambda_unlabel", "lambda_quality"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    label_term: torch.Tensor
    unlabel_term: torch.Tensor
    quality_term: torch.Tensor
    total: torch.Tensor
    n_labeled: int = 0
    n_unlabeled: int = 0

    def detached(self) -> dict[str, float]:
        return {
            "label": float(self.label_term.detach()),
            "unlabel": float(self.unlabel_term.detach()),
            "quality": float(self.quality_term.detach()),
            "total": float(self.total.detach()),
        }


def _clamp(p: torch.Tensor, eps: float) -> torch.Tensor:
    return p.clamp(eps, 1.0 - eps)


def check_tau(tau: float) -> float:
    # At tau <= 0.5 the gate max(p, 1-p) >= tau admits every class.
    if not 0.5 < tau <= 1.0:
        raise ConfigError(f"loss.tau must lie in (0.5, 1], got {tau}")
    return tau


def label_loss(
    y: torch.Tensor, p: torch.Tensor, eps: float = PROB_CLAMP
) -> torch.Tensor:
    """Two-sided multi-label cross entropy, summed over classes, mean over samples."""
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: labels {tuple(y.shape)} vs probs {tuple(p.shape)}")
    if y.numel() == 0:
        return p.new_zeros(())
    p = _clamp(p, eps)
    y = y.to(p.dtype)
    ce = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    return ce.sum(dim=-1).mean()


def masked_label_loss(
    y: torch.Tensor, mask: torch.Tensor, p: torch.Tensor, eps: float = PROB_CLAMP
) -> torch.Tensor:
    """Cross entropy restricted to the classes marked confident in ``mask``.

    Used for pseudo-labeled samples whose labels were frozen at admission:
    unconfident classes are placeholders and contribute nothing.
    """
    if not (y.shape == mask.shape == p.shape):
        raise ValueError("labels, mask, and probs must share a shape")
    if y.numel() == 0:
        return p.new_zeros(())
    p = _clamp(p, eps)
    y = y.to(p.dtype)
    ce = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    return (ce * mask.to(p.dtype)).sum(dim=-1).mean()


def unlabeled_loss(
    p_tilde: torch.Tensor, tau: float, eps: float = PROB_CLAMP
) -> torch.Tensor:
    """Confidence-gated loss on unlabeled predictions.

    A (sample, class) term participates iff max(p, 1-p) >= tau; its target
    is 1 iff p >= tau, else 0.  Gates and targets are constants (no
    gradient); the mean runs over all samples in the batch, including ones
    contributing nothing.
    """
    check_tau(tau)
    if p_tilde.numel() == 0:
        return p_tilde.new_zeros(())
    detached = p_tilde.detach()
    confidence = torch.maximum(detached, 1.0 - detached)
    gate = (confidence >= tau).to(p_tilde.dtype)
    target = (detached >= tau).to(p_tilde.dtype)
    p = _clamp(p_tilde, eps)
    ce = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))
    return (ce * gate).sum(dim=-1).mean()


def quality_loss(
    weights: torch.Tensor, best_flags: torch.Tensor, answer_mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Penalty when a flagged best answer does not hold the maximum weight.

    Per sample: sum over answers of 1(best) * (w_k - max_j w_j)^2, averaged
    over all samples.  Samples without a flagged best answer contribute 0.
    The max is taken over real answers only and is not gradient-stopped:
    minimizing both raises the best answer and lowers the incumbent.
    """
    if weights.shape != best_flags.shape:
        raise ValueError("weights and best flags must share a shape")
    if weights.numel() == 0:
        return weights.new_zeros(())
    if answer_mask is None:
        answer_mask = torch.ones_like(weights, dtype=torch.bool)
    neg_inf = torch.finfo(weights.dtype).min
    masked = torch.where(answer_mask, weights, weights.new_full((), neg_inf))
    has_real = answer_mask.any(dim=-1, keepdim=True)
    max_w = torch.where(
        has_real, masked.max(dim=-1, keepdim=True).values, weights.new_zeros(())
    )
    sq = (weights - max_w) ** 2
    flagged = best_flags.to(weights.dtype) * answer_mask.to(weights.dtype)
    return (sq * flagged).sum(dim=-1).mean()


def total_loss(
    label_term: torch.Tensor,
    unlabel_term: torch.Tensor,
    quality_term: torch.Tensor,
    weights: LossWeights,
    n_labeled: int = 0,
    n_unlabeled: int = 0,
) -> LossBreakdown:
    for name, term in (
        ("label", label_term),
        ("unlabel", unlabel_term),
        ("quality", quality_term),
    ):
        if not torch.isfinite(term).all():
            raise NumericalError(f"non-finite {name} loss term: {term}")
    total = (
        weights.lambda_label * label_term
        + weights.lambda_unlabel * unlabel_term
        + weights.lambda_quality * quality_term
    )
    return LossBreakdown(
        label_term=label_term,
        unlabel_term=unlabel_term,
        quality_term=quality_term,
        total=total,
        n_labeled=n_labeled,
        n_unlabeled=n_unlabeled,
    )
