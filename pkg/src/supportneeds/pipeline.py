"""Four-stage orchestration: answer-aware training, pseudo-labeling,
augmentation, and question-only training, plus cross-validation.

Stages compose over datasets so each boundary artifact (pseudo file,
candidate archive, fused set) stays inspectable.  All stochastic choices
descend from the run seed; single-threaded torch keeps runs bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .augment import (
    LLMClient,
    build_llm_client,
    evaluate_candidates,
    generate_candidates,
    score_and_select,
)
from .config import RunConfig
from .data import Dataset, DatasetKind, fuse, split_kfold
from .encoding import DocumentEncoder, build_encoder
from .errors import DataFormatError, SupportNeedsError
from .metrics import MetricsReport, aggregate_folds, evaluate_predictions
from .q_model import QModel, predict_probs_q, train_q
from .qa_model import QAModel
from .training import TrainState, predict_pseudo, self_train

PIPELINE_MODES = ("supervised", "ssl", "full")


@dataclass
class PipelineResult:
    report: MetricsReport
    mode: str
    q_model: QModel
    qa_model: QAModel | None = None
    train_state: TrainState | None = None
    pseudo: Dataset | None = None
    selected: Dataset | None = None
    fused_size: int = 0
    excluded_partial: int = 0
    candidates: list = field(default_factory=list)


def run_pipeline(
    cfg: RunConfig,
    d_l: Dataset,
    d_test: Dataset,
    d_u: Dataset | None = None,
    mode: str | None = None,
    encoder: DocumentEncoder | None = None,
    llm_client: LLMClient | None = None,
) -> PipelineResult:
    """Train the configured pipeline variant and evaluate on held-out data."""
    mode = cfg.eval.pipeline if mode is None else mode
    if mode not in PIPELINE_MODES:
        raise DataFormatError(f"unknown pipeline mode: {mode!r}")
    if d_l.kind != DatasetKind.LABELED:
        raise DataFormatError("pipeline needs a labeled training dataset")
    torch.set_num_threads(cfg.trainer.num_threads)
    encoder = build_encoder(cfg.encoder) if encoder is None else encoder

    qa_model: QAModel | None = None
    state: TrainState | None = None
    pseudo: Dataset | None = None
    selected: Dataset | None = None
    candidates: list = []

    if mode in ("ssl", "full"):
        if d_u is None or len(d_u) == 0:
            d_u = Dataset((), DatasetKind.UNLABELED, d_l.classes)
        qa_model, state = self_train(d_l, d_u, cfg, encoder)
        pseudo, _ = predict_pseudo(qa_model, d_u, cfg, encoder)

    if mode == "full":
        if llm_client is None:
            llm_client = build_llm_client(cfg.augment, cfg.seed)
        candidates, _ = generate_candidates(d_l, cfg.augment, llm_client, cfg.seed)
        evaluate_candidates(candidates, d_l, encoder, cfg.augment.neighbors)
        selected = score_and_select(
            candidates, cfg.augment.delta, cfg.augment.eta, d_l.classes
        )

    d_f, excluded = fuse(d_l, pseudo, selected)
    q_model, _ = train_q(d_f, cfg)

    probs = predict_probs_q(q_model, [s.question_text for s in d_test])
    report = evaluate_predictions(
        d_test.labels_array(), probs, d_l.classes, cfg.eval.threshold
    )
    report.notes = {
        "mode": mode,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "n_labeled": len(d_l),
        "n_unlabeled": len(d_u) if d_u is not None else 0,
        "n_pseudo_admitted": len(pseudo) if pseudo is not None else 0,
        "n_candidates": len(candidates),
        "n_selected": len(selected) if selected is not None else 0,
        "n_fused": len(d_f),
        "n_partial_excluded": excluded,
        "generations_run": state.generations_run if state is not None else 0,
    }
    return PipelineResult(
        report=report,
        mode=mode,
        q_model=q_model,
        qa_model=qa_model,
        train_state=state,
        pseudo=pseudo,
        selected=selected,
        fused_size=len(d_f),
        excluded_partial=excluded,
        candidates=candidates,
    )


def cross_validate(
    cfg: RunConfig,
    dataset: Dataset,
    d_u: Dataset | None = None,
    folds: int | None = None,
    seed: int | None = None,
    encoder: DocumentEncoder | None = None,
    llm_client: LLMClient | None = None,
) -> tuple[MetricsReport, list[PipelineResult]]:
    """Per-fold pipeline runs; the unlabeled pool is shared across folds.

    Test questions never enter the unlabeled pool, and augmentation few-shot
    examples come from each fold's training split only, so no fold ever
    sees its own test data.
    """
    folds = cfg.eval.folds if folds is None else folds
    seed = cfg.seed if seed is None else seed
    if dataset.kind != DatasetKind.LABELED:
        raise DataFormatError("cross-validation needs a labeled dataset")
    encoder = build_encoder(cfg.encoder) if encoder is None else encoder

    results: list[PipelineResult] = []
    reports: list[MetricsReport] = []
    for fold_index, (train, test) in enumerate(split_kfold(dataset, folds, seed)):
        fold_cfg = _with_seed(cfg, seed + fold_index)
        try:
            result = run_pipeline(
                fold_cfg, train, test, d_u=d_u,
                encoder=encoder, llm_client=llm_client,
            )
        except SupportNeedsError as e:
            raise type(e)(f"fold {fold_index}: {e}") from e
        results.append(result)
        reports.append(result.report)

    summary = aggregate_folds(reports, dataset.classes)
    summary.notes = {
        "folds": folds,
        "seed": seed,
        "mode": cfg.eval.pipeline,
        "config_hash": cfg.config_hash(),
        "unlabeled_shared": d_u is not None and len(d_u) > 0,
    }
    return summary, results


def _with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    import copy

    out = copy.deepcopy(cfg)
    out.seed = seed
    return out
