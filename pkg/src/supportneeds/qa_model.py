"""Answer-aware question classifier.

Pipeline per sample: build an m x n grid of concatenated (question sentence,
answer sentence) vectors, run banks of small 2D convolution kernels over it,
adaptively max-pool each bank to a fixed P x P grid, and flatten -- giving a
fixed-length interaction feature per answer regardless of sentence counts.
A bilinear attention over document vectors weighs the K answers, weighted
sums aggregate interaction and answer features, and a linear head with
per-class sigmoids produces multi-label probabilities.

Forward passes with frozen parameters are pure; parameter mutation is
confined to the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .errors import ConfigError


def build_interaction_matrix(q_sent: torch.Tensor, a_sent: torch.Tensor) -> torch.Tensor:
    """Pairwise concatenation grid: cell (i, j) = [q_sent[i]; a_sent[j]].

    Accepts (m, d) + (n, d) or batched (..., m, d) + (..., n, d) with equal
    leading dims; returns (..., m, n, 2d).
    """
    if q_sent.shape[-1] != a_sent.shape[-1]:
        raise ValueError(
            f"dimension mismatch: question rows have d={q_sent.shape[-1]}, "
            f"answer rows have d={a_sent.shape[-1]}"
        )
    m = q_sent.shape[-2]
    n = a_sent.shape[-2]
    q_exp = q_sent.unsqueeze(-2).expand(*q_sent.shape[:-2], m, n, q_sent.shape[-1])
    a_exp = a_sent.unsqueeze(-3).expand(*a_sent.shape[:-2], m, n, a_sent.shape[-1])
    return torch.cat([q_exp, a_exp], dim=-1)


class InteractionKernelBank(nn.Module):
    """Banks of 2D kernels over the interaction grid, one bank per size.

    Each bank runs a valid convolution (channels = 2d), takes the maximum
    activation on an adaptive P x P grid, and flattens.  Output length is
    |kernel set| * filters * P^2, a pure function of configuration.
    """

    def __init__(
        self,
        dim: int,
        kernel_sizes: tuple[tuple[int, int], ...],
        filters: int,
        pool_size: int,
        grid: tuple[int, int],
    ):
        super().__init__()
        if not kernel_sizes:
            raise ConfigError("kernel set must be non-empty")
        m, n = grid
        for i, j in kernel_sizes:
            if i > m or j > n:
                raise ConfigError(
                    f"kernel ({i}, {j}) larger than the {m} x {n} sentence grid"
                )
        self.kernel_sizes = tuple(kernel_sizes)
        self.filters = filters
        self.pool_size = pool_size
        self.convs = nn.ModuleList(
            nn.Conv2d(2 * dim, filters, kernel_size=(i, j)) for i, j in kernel_sizes
        )
        self.pool = nn.AdaptiveMaxPool2d((pool_size, pool_size))

    @property
    def feature_length(self) -> int:
        return len(self.kernel_sizes) * self.filters * self.pool_size**2

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """grid: (B, 2d, m, n) -> (B, feature_length)."""
        pieces = []
        for conv in self.convs:
            activation = conv(grid)
            pooled = self.pool(activation)
            pieces.append(pooled.flatten(start_dim=1))
        return torch.cat(pieces, dim=1)

    def apply_single(self, interaction: torch.Tensor) -> torch.Tensor:
        """interaction: (m, n, 2d) from build_interaction_matrix -> (feature_length,)."""
        grid = interaction.permute(2, 0, 1).unsqueeze(0)
        return self.forward(grid).squeeze(0)

    def shape_trace(self, grid_hw: tuple[int, int]) -> dict[str, dict[str, tuple[int, int]]]:
        m, n = grid_hw
        out = {}
        for i, j in self.kernel_sizes:
            out[f"{i}x{j}"] = {
                "conv": (m - i + 1, n - j + 1),
                "pooled": (self.pool_size, self.pool_size),
            }
        return out


def attention_scores(
    q_doc: torch.Tensor,
    a_docs: torch.Tensor,
    real_mask: torch.Tensor,
    w_s: torch.Tensor,
    b_s: torch.Tensor,
) -> torch.Tensor:
    """Bilinear tanh relevance scores softmaxed over the real answers.

    q_doc (..., d), a_docs (..., K, d), real_mask (..., K) bool.  Padded
    slots receive exactly zero weight; each row of weights sums to 1 over
    the real answers.  Rows with no real answer are an error.
    """
    if a_docs.shape[-2] != real_mask.shape[-1]:
        raise ValueError("answer list and mask length differ")
    if not bool(real_mask.any(dim=-1).all()):
        raise ValueError("every sample needs at least one real answer")
    scores = torch.tanh(
        torch.einsum("...d,de,...ke->...k", q_doc, w_s, a_docs) + b_s
    )
    masked = scores.masked_fill(~real_mask, float("-inf"))
    return torch.softmax(masked, dim=-1)


def aggregate_answers(weights: torch.Tensor, vectors: torch.Tensor) -> torch.Tensor:
    """Convex combination sum_k w_k * v_k; weights (..., K), vectors (..., K, D)."""
    if weights.shape[-1] != vectors.shape[-2]:
        raise ValueError(
            f"length mismatch: {weights.shape[-1]} weights vs {vectors.shape[-2]} vectors"
        )
    return torch.einsum("...k,...kd->...d", weights, vectors)


@dataclass
class ForwardTrace:
    """Inspection view of one forward pass (numpy, detached)."""

    attention_weights: np.ndarray       # (B, K), zero on padded slots
    interaction_per_answer: np.ndarray  # (B, K, L)
    interaction_aggregate: np.ndarray   # (B, L)
    answer_aggregate: np.ndarray        # (B, d)
    probabilities: np.ndarray           # (B, C)
    layer_shapes: dict


class QAModel(nn.Module):
    """Question + answers -> per-class probabilities."""

    def __init__(
        self,
        dim: int,
        n_classes: int,
        model_cfg: ModelConfig,
        grid: tuple[int, int],
    ):
        super().__init__()
        self.dim = dim
        self.n_classes = n_classes
        self.grid = tuple(grid)
        self.kernels = InteractionKernelBank(
            dim, model_cfg.kernel_sizes, model_cfg.filters, model_cfg.pool_size, grid
        )
        self.attn_bilinear = nn.Parameter(torch.empty(dim, dim))
        self.attn_bias = nn.Parameter(torch.zeros(()))
        nn.init.xavier_uniform_(self.attn_bilinear)
        self.dropout = nn.Dropout(model_cfg.dropout)
        concat_dim = dim + self.kernels.feature_length + dim
        self.head = nn.Linear(concat_dim, n_classes)

    def forward(
        self,
        q_doc: torch.Tensor,    # (B, d)
        q_sent: torch.Tensor,   # (B, m, d)
        a_doc: torch.Tensor,    # (B, K, d)
        a_sent: torch.Tensor,   # (B, K, n, d)
        answer_mask: torch.Tensor,  # (B, K) bool
        with_trace: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor] | tuple[torch.Tensor, torch.Tensor, ForwardTrace]:
        b, k_slots, n, d = a_sent.shape
        m = q_sent.shape[1]

        q_exp = q_sent.unsqueeze(1).expand(b, k_slots, m, d)
        interaction = build_interaction_matrix(q_exp, a_sent)  # (B, K, m, n, 2d)
        grid = interaction.reshape(b * k_slots, m, n, 2 * d).permute(0, 3, 1, 2)
        features = self.kernels(grid)
        features = self.dropout(features)
        h_qa_k = features.reshape(b, k_slots, -1)

        weights = attention_scores(
            q_doc, a_doc, answer_mask, self.attn_bilinear, self.attn_bias
        )
        h_qa = aggregate_answers(weights, h_qa_k)
        h_a = aggregate_answers(weights, a_doc)

        concat = torch.cat([q_doc, h_qa, h_a], dim=-1)
        logits = self.head(concat)
        probs = torch.sigmoid(logits)

        if not with_trace:
            return probs, weights
        trace = ForwardTrace(
            attention_weights=weights.detach().cpu().numpy(),
            interaction_per_answer=h_qa_k.detach().cpu().numpy(),
            interaction_aggregate=h_qa.detach().cpu().numpy(),
            answer_aggregate=h_a.detach().cpu().numpy(),
            probabilities=probs.detach().cpu().numpy(),
            layer_shapes=self.kernels.shape_trace((m, n)),
        )
        return probs, weights, trace
