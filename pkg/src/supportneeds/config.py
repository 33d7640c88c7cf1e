"""Layered run configuration.

Precedence (lowest to highest): built-in defaults, config file, environment
variables, command-line overrides.  Every stage validates the whole config
before running and writes the effective config next to its artifacts.

Environment variables use the prefix ``SUPPORTNEEDS_`` with ``__`` standing
in for the dot, e.g. ``SUPPORTNEEDS_LOSS__TAU=0.8`` sets ``loss.tau``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

ENV_PREFIX = "SUPPORTNEEDS_"


@dataclass
class DataConfig:
    classes: tuple[str, ...] = ("informational", "emotional", "network")
    max_answers: int = 5


@dataclass
class EncoderConfig:
    backend: str = "stub"  # stub | transformer
    dim: int = 256
    model_id: str = "sentence-transformers/all-MiniLM-L6-v2"
    max_q_sentences: int = 8
    max_a_sentences: int = 6


@dataclass
class ModelConfig:
    kernel_sizes: tuple[tuple[int, int], ...] = ((1, 1), (1, 2), (2, 1), (2, 2))
    filters: int = 8
    pool_size: int = 4
    dropout: float = 0.4


@dataclass
class LossConfig:
    lambda_label: float = 1.0
    lambda_unlabel: float = 1.0
    lambda_quality: float = 1.0
    tau: float = 0.7
    prob_clamp: float = 1e-7


@dataclass
class TrainerConfig:
    batch_size: int = 64
    learning_rate: float = 0.01
    optimizer: str = "adam"
    scheduler: str = "linear"  # linear decay | none
    warmup_epochs: int = 50
    inner_epochs: int = 50
    q_epochs: int = 50
    min_epochs: int = 2
    epsilon_loss: float = 1e-3
    epsilon_generation: float = 1e-3
    max_generations: int = 5
    val_fraction: float = 0.1
    num_threads: int = 1


@dataclass
class AugmentConfig:
    backend: str = "stub"  # stub | http
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "LLM_API_KEY"
    batches: int = 5
    batch_size: int = 20
    few_shot: int = 8
    neighbors: int = 5
    delta: float = 0.4
    eta: float = 0.2
    timeout: float = 30.0
    max_retries: int = 3


@dataclass
class QModelConfig:
    hidden_size: int = 256
    embed_dim: int = 64
    vocab_buckets: int = 4096
    max_tokens: int = 64


@dataclass
class EvalConfig:
    folds: int = 10
    pipeline: str = "full"  # supervised | ssl | full
    threshold: float = 0.5
    figures: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    qmodel: QModelConfig = field(default_factory=QModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"seed": self.seed, "out_dir": self.out_dir}
        for section in _SECTIONS:
            sub = getattr(self, section)
            out[section] = {
                f.name: _plain(getattr(sub, f.name)) for f in fields(sub)
            }
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def write_effective(self, path: str | Path) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8"
        )


_SECTIONS = ("data", "encoder", "model", "loss", "trainer", "augment", "qmodel", "eval")
_SECTION_TYPES = {
    "data": DataConfig,
    "encoder": EncoderConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "trainer": TrainerConfig,
    "augment": AugmentConfig,
    "qmodel": QModelConfig,
    "eval": EvalConfig,
}


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def known_keys() -> list[str]:
    """All dotted config keys, plus the two top-level scalars."""
    keys = ["seed", "out_dir"]
    for section, cls in _SECTION_TYPES.items():
        keys.extend(f"{section}.{f.name}" for f in fields(cls))
    return keys


def _coerce(key: str, raw: Any, target_type: Any) -> Any:
    """Coerce a file/env/flag value to the declared field type."""
    if key == "model.kernel_sizes":
        return _parse_kernel_sizes(key, raw)
    if key == "data.classes":
        if isinstance(raw, str):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
        elif isinstance(raw, (list, tuple)):
            parts = [str(p) for p in raw]
        else:
            raise ConfigError(f"{key}: expected a list of class names, got {raw!r}")
        if not parts:
            raise ConfigError(f"{key}: class list must be non-empty")
        return tuple(parts)
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "1", "yes"):
            return True
        if isinstance(raw, str) and raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            value = int(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from e
        return value
    if target_type is float:
        try:
            value = float(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from e
        return value
    if target_type is str:
        return str(raw)
    raise ConfigError(f"{key}: unsupported config field type {target_type!r}")


def _parse_kernel_sizes(key: str, raw: Any) -> tuple[tuple[int, int], ...]:
    # Accept "1x1,1x2" strings or [[1,1],[1,2]] lists.
    if isinstance(raw, str):
        pairs = []
        for chunk in raw.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            bits = chunk.lower().split("x")
            if len(bits) != 2:
                raise ConfigError(f"{key}: expected WxH pairs, got {chunk!r}")
            pairs.append((int(bits[0]), int(bits[1])))
    elif isinstance(raw, (list, tuple)):
        try:
            pairs = [(int(a), int(b)) for a, b in raw]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{key}: expected pairs of integers") from e
    else:
        raise ConfigError(f"{key}: expected kernel size pairs, got {raw!r}")
    if not pairs:
        raise ConfigError(f"{key}: kernel set must be non-empty")
    return tuple(pairs)


def _field_type(key: str) -> Any:
    if key == "seed":
        return int
    if key == "out_dir":
        return str
    section, _, name = key.partition(".")
    cls = _SECTION_TYPES.get(section)
    if cls is None:
        raise ConfigError(f"unknown config key: {key}")
    for f in fields(cls):
        if f.name == name:
            if key in ("model.kernel_sizes", "data.classes"):
                return tuple
            return f.type if isinstance(f.type, type) else _ANNOT_TYPES[f.type]
    raise ConfigError(f"unknown config key: {key}")


# dataclass field annotations are strings under `from __future__ import annotations`
_ANNOT_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _set_key(cfg: RunConfig, key: str, raw: Any) -> None:
    value = _coerce(key, raw, _field_type(key))
    if key == "seed":
        cfg.seed = value
    elif key == "out_dir":
        cfg.out_dir = value
    else:
        section, _, name = key.partition(".")
        setattr(getattr(cfg, section), name, value)


def _flatten_file(doc: Any) -> dict[str, Any]:
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ConfigError("config file must contain a mapping at the top level")
    flat: dict[str, Any] = {}
    for key, value in doc.items():
        if isinstance(value, Mapping) and key in _SECTION_TYPES:
            for sub, subval in value.items():
                flat[f"{key}.{sub}"] = subval
        else:
            flat[str(key)] = value
    return flat


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Build a validated RunConfig from the four layers."""
    cfg = RunConfig()
    valid = set(known_keys())

    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse config file {p}: {e}") from e
        for key, value in _flatten_file(doc).items():
            if key not in valid:
                raise ConfigError(f"unknown config key in {p}: {key}")
            _set_key(cfg, key, value)

    env = os.environ if env is None else env
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key not in valid:
            raise ConfigError(f"unknown config key from environment: {name}")
        _set_key(cfg, key, value)

    for key, value in (overrides or {}).items():
        if key not in valid:
            raise ConfigError(f"unknown config key: {key}")
        _set_key(cfg, key, value)

    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Whole-config validation; raises ConfigError naming the offending key."""
    if len(cfg.data.classes) < 1:
        raise ConfigError("data.classes: need at least one class")
    if len(set(cfg.data.classes)) != len(cfg.data.classes):
        raise ConfigError("data.classes: class names must be unique")
    if cfg.data.max_answers < 1:
        raise ConfigError("data.max_answers: must be >= 1")

    if cfg.encoder.backend not in ("stub", "transformer"):
        raise ConfigError("encoder.backend: must be 'stub' or 'transformer'")
    if cfg.encoder.dim < 1:
        raise ConfigError("encoder.dim: must be >= 1")
    if cfg.encoder.max_q_sentences < 1 or cfg.encoder.max_a_sentences < 1:
        raise ConfigError("encoder.max_q_sentences / max_a_sentences: must be >= 1")

    if cfg.model.filters < 1:
        raise ConfigError("model.filters: must be >= 1")
    if cfg.model.pool_size < 1:
        raise ConfigError("model.pool_size: must be >= 1")
    if not 0.0 <= cfg.model.dropout < 1.0:
        raise ConfigError("model.dropout: must be in [0, 1)")
    max_i = max(i for i, _ in cfg.model.kernel_sizes)
    max_j = max(j for _, j in cfg.model.kernel_sizes)
    if any(i < 1 or j < 1 for i, j in cfg.model.kernel_sizes):
        raise ConfigError("model.kernel_sizes: entries must be >= 1")
    if max_i > cfg.encoder.max_q_sentences or max_j > cfg.encoder.max_a_sentences:
        raise ConfigError(
            "model.kernel_sizes: largest kernel "
            f"({max_i}, {max_j}) exceeds the sentence grid "
            f"({cfg.encoder.max_q_sentences}, {cfg.encoder.max_a_sentences})"
        )

    for name in ("lambda_label", "lambda_unlabel", "lambda_quality"):
        value = getattr(cfg.loss, name)
        if not math.isfinite(value) or value < 0:
            raise ConfigError(f"loss.{name}: must be finite and >= 0")
    if not 0.5 < cfg.loss.tau <= 1.0:
        raise ConfigError(
            f"loss.tau: must lie in (0.5, 1], got {cfg.loss.tau} "
            "(at or below 0.5 every prediction would pass the confidence gate)"
        )
    if not 0.0 < cfg.loss.prob_clamp < 0.5:
        raise ConfigError("loss.prob_clamp: must lie in (0, 0.5)")

    if cfg.trainer.batch_size < 1:
        raise ConfigError("trainer.batch_size: must be >= 1")
    if cfg.trainer.learning_rate <= 0:
        raise ConfigError("trainer.learning_rate: must be > 0")
    if cfg.trainer.optimizer not in ("adam", "sgd"):
        raise ConfigError("trainer.optimizer: must be 'adam' or 'sgd'")
    if cfg.trainer.scheduler not in ("linear", "none"):
        raise ConfigError("trainer.scheduler: must be 'linear' or 'none'")
    for name in ("warmup_epochs", "inner_epochs", "q_epochs", "min_epochs"):
        if getattr(cfg.trainer, name) < 1:
            raise ConfigError(f"trainer.{name}: must be >= 1")
    for name in ("epsilon_loss", "epsilon_generation"):
        if getattr(cfg.trainer, name) <= 0:
            raise ConfigError(f"trainer.{name}: must be > 0")
    if cfg.trainer.max_generations < 1:
        raise ConfigError("trainer.max_generations: must be >= 1")
    if not 0.0 < cfg.trainer.val_fraction < 1.0:
        raise ConfigError("trainer.val_fraction: must lie in (0, 1)")
    if cfg.trainer.num_threads < 1:
        raise ConfigError("trainer.num_threads: must be >= 1")

    if cfg.augment.backend not in ("stub", "http"):
        raise ConfigError("augment.backend: must be 'stub' or 'http'")
    if cfg.augment.batches < 1 or cfg.augment.batch_size < 1:
        raise ConfigError("augment.batches / batch_size: must be >= 1")
    if cfg.augment.few_shot < 1:
        raise ConfigError("augment.few_shot: must be >= 1")
    if cfg.augment.neighbors < 1:
        raise ConfigError("augment.neighbors: must be >= 1")
    if not 0.0 <= cfg.augment.delta <= 1.0:
        raise ConfigError("augment.delta: must lie in [0, 1]")
    if not math.isfinite(cfg.augment.eta):
        raise ConfigError("augment.eta: must be finite")

    if cfg.qmodel.hidden_size < 1 or cfg.qmodel.embed_dim < 1:
        raise ConfigError("qmodel.hidden_size / embed_dim: must be >= 1")
    if cfg.qmodel.vocab_buckets < 2:
        raise ConfigError("qmodel.vocab_buckets: must be >= 2")
    if cfg.qmodel.max_tokens < 1:
        raise ConfigError("qmodel.max_tokens: must be >= 1")

    if cfg.eval.folds < 2:
        raise ConfigError("eval.folds: must be >= 2")
    if cfg.eval.pipeline not in ("supervised", "ssl", "full"):
        raise ConfigError("eval.pipeline: must be 'supervised', 'ssl', or 'full'")
    if not 0.0 < cfg.eval.threshold < 1.0:
        raise ConfigError("eval.threshold: must lie in (0, 1)")


def replace_section(cfg: RunConfig, **kwargs: Any) -> RunConfig:
    """Return a deep copy of cfg with top-level fields replaced."""
    return dataclasses.replace(cfg, **kwargs)
