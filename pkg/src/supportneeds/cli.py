"""Command-line entry points, one per pipeline stage.

Exit codes: 0 success, 2 configuration error, 3 I/O or data-format error,
4 backend error, 5 numerical failure.  Existing outputs are refused unless
--overwrite is passed; the effective configuration is written next to every
artifact so runs are auditable and repeatable.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .augment import (
    build_llm_client,
    candidates_from_jsonl,
    candidates_to_jsonl,
    evaluate_candidates,
    generate_candidates,
    score_and_select,
    sweep_eta,
)
from .config import RunConfig, load_config
from .data import (
    Dataset,
    DatasetKind,
    fuse,
    load_dataset_file,
    write_dataset_file,
)
from .encoding import build_encoder
from .errors import (
    BackendError,
    ConfigError,
    DataFormatError,
    EncoderError,
    NumericalError,
    SupportNeedsError,
)
from .metrics import MetricsReport
from .pipeline import cross_validate
from .q_model import load_q_model, predict, predict_probs_q, save_q_checkpoint, train_q
from .qa_model import QAModel
from .reporting import (
    write_fold_figure,
    write_report,
    write_roc_outputs,
    write_selection_sweep,
    write_training_log,
)
from .synthetic import make_corpus
from .training import (
    load_qa_model,
    predict_pseudo,
    save_qa_checkpoint,
    self_train,
)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_NUMERIC = 5


def _exit_code(error: Exception) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (DataFormatError, FileNotFoundError, OSError)):
        return EXIT_IO
    if isinstance(error, (BackendError, EncoderError)):
        return EXIT_BACKEND
    if isinstance(error, NumericalError):
        return EXIT_NUMERIC
    return 1


def _wrap(fn):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SupportNeedsError, FileNotFoundError, OSError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(_exit_code(e))

    return inner


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML config file.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory for artifacts.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Override any config key (repeatable).")
@click.option("--overwrite", is_flag=True, help="Allow replacing existing outputs.")
@click.pass_context
def main(ctx, config_path, seed, out_dir, sets, overwrite):
    """Support-need classification pipeline."""
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path, seed=seed, out_dir=out_dir,
        sets=sets, overwrite=overwrite,
    )


def _load_cfg(obj) -> RunConfig:
    overrides: dict = {}
    for item in obj.get("sets", ()):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if obj.get("seed") is not None:
        overrides["seed"] = obj["seed"]
    if obj.get("out_dir") is not None:
        overrides["out_dir"] = obj["out_dir"]
    return load_config(obj.get("config_path"), overrides=overrides)


def _prepare_out(cfg: RunConfig, obj, *names: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not obj.get("overwrite"):
        clashes = [str(out / n) for n in names if (out / n).exists()]
        if clashes:
            raise DataFormatError(
                "output already exists (pass --overwrite to replace): "
                + ", ".join(clashes)
            )
    cfg.write_effective(out / "effective_config.yaml")
    return out


def _load(path, kind: DatasetKind, cfg: RunConfig) -> Dataset:
    dataset, diagnostics = load_dataset_file(
        path, kind, cfg.data.classes, cfg.data.max_answers
    )
    if diagnostics.rejected:
        for line_no, reason in diagnostics.rejected[:10]:
            click.echo(f"warning: {path}:{line_no}: {reason}", err=True)
        if len(diagnostics.rejected) > 10:
            click.echo(
                f"warning: {len(diagnostics.rejected) - 10} further rejected lines",
                err=True,
            )
    if diagnostics.dropped_missing_best:
        click.echo(
            f"warning: dropped {diagnostics.dropped_missing_best} samples "
            "without a best-answer flag",
            err=True,
        )
    return dataset


@main.command("make-data")
@click.option("--labeled", "n_labeled", type=int, default=200, show_default=True)
@click.option("--unlabeled", "n_unlabeled", type=int, default=800, show_default=True)
@click.option("--test", "n_test", type=int, default=100, show_default=True)
@click.pass_obj
@_wrap
def cmd_make_data(obj, n_labeled, n_unlabeled, n_test):
    """Write a synthetic corpus (labeled/unlabeled/test JSONL files)."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "labeled.jsonl", "unlabeled.jsonl", "test.jsonl")
    d_l, d_u = make_corpus(n_labeled, n_unlabeled, cfg.seed, classes=cfg.data.classes)
    d_test, _ = make_corpus(n_test, 0, cfg.seed + 7919, classes=cfg.data.classes)
    write_dataset_file(d_l, out / "labeled.jsonl")
    write_dataset_file(d_u, out / "unlabeled.jsonl")
    write_dataset_file(d_test, out / "test.jsonl")
    click.echo(f"wrote {len(d_l)} labeled, {len(d_u)} unlabeled, {len(d_test)} test")


@main.command("train-qa")
@click.option("--labeled", "labeled_path", type=click.Path(), required=True)
@click.option("--unlabeled", "unlabeled_path", type=click.Path(), default=None)
@click.pass_obj
@_wrap
def cmd_train_qa(obj, labeled_path, unlabeled_path):
    """Warm-up plus self-training; writes per-generation checkpoints."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "qa_model", "train_log.jsonl")
    d_l = _load(labeled_path, DatasetKind.LABELED, cfg)
    if unlabeled_path is not None:
        d_u = _load(unlabeled_path, DatasetKind.UNLABELED, cfg)
    else:
        d_u = Dataset((), DatasetKind.UNLABELED, cfg.data.classes)
    encoder = build_encoder(cfg.encoder)
    model, state = self_train(d_l, d_u, cfg, encoder)
    save_qa_checkpoint(out / "qa_model", model, cfg, encoder)
    for g, snapshot in enumerate(state.snapshots):
        shadow = QAModel(
            dim=encoder.dim, n_classes=len(cfg.data.classes),
            model_cfg=cfg.model,
            grid=(cfg.encoder.max_q_sentences, cfg.encoder.max_a_sentences),
        )
        shadow.load_state_dict(snapshot)
        save_qa_checkpoint(out / f"qa_generation_{g:02d}", shadow, cfg, encoder)
    write_training_log(state.log, out, render_figure=cfg.eval.figures)
    click.echo(
        f"generations={state.generations_run} admitted={sum(state.admitted_per_generation)} "
        f"best_generation={state.best_generation} best_val_f1={state.best_val_f1:.4f} "
        f"stop={state.stop_reason}"
    )


@main.command("pseudo-label")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--unlabeled", "unlabeled_path", type=click.Path(), required=True)
@click.pass_obj
@_wrap
def cmd_pseudo_label(obj, checkpoint_path, unlabeled_path):
    """Export confidence-gated pseudo-labels for an unlabeled dataset."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "pseudo.jsonl", "pseudo_meta.json")
    d_u = _load(unlabeled_path, DatasetKind.UNLABELED, cfg)
    encoder = build_encoder(cfg.encoder)
    model = load_qa_model(checkpoint_path, cfg, encoder)
    pseudo, probs = predict_pseudo(model, d_u, cfg, encoder)
    write_dataset_file(pseudo, out / "pseudo.jsonl")
    meta = {
        "tau": cfg.loss.tau,
        "n_unlabeled": len(d_u),
        "n_admitted": len(pseudo),
        "n_all_confident": sum(1 for s in pseudo if s.all_confident),
        "classes": list(cfg.data.classes),
    }
    (out / "pseudo_meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"admitted {len(pseudo)} of {len(d_u)} unlabeled samples")
    del probs


@main.command("augment")
@click.option("--labeled", "labeled_path", type=click.Path(), required=True)
@click.pass_obj
@_wrap
def cmd_augment(obj, labeled_path):
    """Generate candidate samples through the configured LLM backend."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "candidates.jsonl")
    d_l = _load(labeled_path, DatasetKind.LABELED, cfg)
    client = build_llm_client(
        cfg.augment, cfg.seed, audit_path=str(out / "llm_audit.jsonl")
    )
    candidates, stats = generate_candidates(d_l, cfg.augment, client, cfg.seed)
    (out / "candidates.jsonl").write_text(
        candidates_to_jsonl(candidates), encoding="utf-8"
    )
    click.echo(
        f"generated {len(candidates)} candidates over {stats['batches']} batches "
        f"(malformed={stats['skipped_malformed']}, all_true={stats['rejected_all_true']})"
    )


@main.command("select")
@click.option("--candidates", "candidates_path", type=click.Path(), required=True)
@click.option("--labeled", "labeled_path", type=click.Path(), required=True)
@click.option("--sweep", is_flag=True, help="Also emit the selection-size curve.")
@click.pass_obj
@_wrap
def cmd_select(obj, candidates_path, labeled_path, sweep):
    """Score candidates for consistency/diversity and keep those above eta."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "selected.jsonl", "candidates_scored.jsonl")
    d_l = _load(labeled_path, DatasetKind.LABELED, cfg)
    path = Path(candidates_path)
    if not path.exists():
        raise FileNotFoundError(f"candidate archive not found: {path}")
    candidates = candidates_from_jsonl(
        path.read_text(encoding="utf-8"), cfg.data.classes
    )
    encoder = build_encoder(cfg.encoder)
    evaluate_candidates(candidates, d_l, encoder, cfg.augment.neighbors)
    selected = score_and_select(
        candidates, cfg.augment.delta, cfg.augment.eta, cfg.data.classes
    )
    write_dataset_file(selected, out / "selected.jsonl")
    (out / "candidates_scored.jsonl").write_text(
        candidates_to_jsonl(candidates), encoding="utf-8"
    )
    if sweep:
        etas = [round(0.02 * i, 2) for i in range(51)]
        rows = sweep_eta(candidates, cfg.augment.delta, etas, cfg.data.classes)
        write_selection_sweep(rows, out, "eta", render_figure=cfg.eval.figures)
    click.echo(f"kept {len(selected)} of {len(candidates)} candidates")


@main.command("train-q")
@click.option("--labeled", "labeled_path", type=click.Path(), required=True)
@click.option("--pseudo", "pseudo_path", type=click.Path(), default=None)
@click.option("--augmented", "augmented_path", type=click.Path(), default=None)
@click.pass_obj
@_wrap
def cmd_train_q(obj, labeled_path, pseudo_path, augmented_path):
    """Fuse inputs and train the question-only classifier."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "q_model", "fused.jsonl")
    d_l = _load(labeled_path, DatasetKind.LABELED, cfg)
    d_u_star = _load(pseudo_path, DatasetKind.PSEUDO, cfg) if pseudo_path else None
    d_a_star = (
        _load(augmented_path, DatasetKind.SELECTED, cfg) if augmented_path else None
    )
    d_f, excluded = fuse(d_l, d_u_star, d_a_star)
    write_dataset_file(d_f, out / "fused.jsonl")
    model, history = train_q(d_f, cfg)
    save_q_checkpoint(out / "q_model", model, cfg)
    click.echo(
        f"fused {len(d_f)} samples (excluded {excluded} partially confident); "
        f"trained {len(history)} epochs, final loss {history[-1]['loss']:.4f}"
    )


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--test", "test_path", type=click.Path(), required=True)
@click.pass_obj
@_wrap
def cmd_evaluate(obj, checkpoint_path, test_path):
    """Evaluate a question-model checkpoint on a labeled dataset."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "report.json", "report.txt")
    d_test = _load(test_path, DatasetKind.LABELED, cfg)
    model = load_q_model(checkpoint_path, cfg)
    probs = predict_probs_q(model, [s.question_text for s in d_test])
    from .metrics import evaluate_predictions

    report = evaluate_predictions(
        d_test.labels_array(), probs, cfg.data.classes, cfg.eval.threshold
    )
    report.notes = {"seed": cfg.seed, "config_hash": cfg.config_hash()}
    write_report(report, out)
    write_roc_outputs(
        d_test.labels_array(), probs, cfg.data.classes, out,
        render_figure=cfg.eval.figures,
    )
    click.echo(
        f"micro_f1={report.micro_f1:.4f} micro_auc="
        + (f"{report.micro_auc:.4f}" if report.micro_auc is not None else "undefined")
    )


@main.command("cv")
@click.option("--labeled", "labeled_path", type=click.Path(), required=True)
@click.option("--unlabeled", "unlabeled_path", type=click.Path(), default=None)
@click.option("--folds", type=int, default=None, help="Override eval.folds.")
@click.pass_obj
@_wrap
def cmd_cv(obj, labeled_path, unlabeled_path, folds):
    """Cross-validated pipeline runs with mean and spread per metric."""
    cfg = _load_cfg(obj)
    out = _prepare_out(cfg, obj, "cv_report.json", "cv_report.txt")
    d_l = _load(labeled_path, DatasetKind.LABELED, cfg)
    d_u = (
        _load(unlabeled_path, DatasetKind.UNLABELED, cfg) if unlabeled_path else None
    )
    report, _ = cross_validate(cfg, d_l, d_u=d_u, folds=folds)
    write_report(report, out, basename="cv_report")
    write_fold_figure(report, out) if cfg.eval.figures else None
    click.echo(
        f"folds={len(report.folds)} micro_f1={report.fold_mean.get('micro_f1', 0.0):.4f}"
        f" +/- {report.fold_std.get('micro_f1', 0.0):.4f}"
    )


@main.command("predict")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.pass_obj
@_wrap
def cmd_predict(obj, checkpoint_path):
    """Read questions from stdin (one per line), emit JSONL predictions."""
    cfg = _load_cfg(obj)
    model = load_q_model(checkpoint_path, cfg)
    for line in sys.stdin:
        question = line.strip()
        if not question:
            continue
        probs, labels = predict(model, question, cfg.eval.threshold)
        click.echo(
            json.dumps(
                {
                    "question": question,
                    "probabilities": [round(float(p), 6) for p in probs],
                    "labels": list(labels),
                    "classes": list(cfg.data.classes),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )


if __name__ == "__main__":
    main()
