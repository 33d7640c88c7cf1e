import pytest

from supportneeds.config import RunConfig, validate_config
from supportneeds.encoding import HashingEncoder


def small_config(**overrides) -> RunConfig:
    """A fast, fully validated config for unit tests."""
    cfg = RunConfig()
    cfg.seed = 0
    cfg.encoder.dim = 16
    cfg.encoder.max_q_sentences = 3
    cfg.encoder.max_a_sentences = 2
    cfg.model.filters = 2
    cfg.model.pool_size = 2
    cfg.data.max_answers = 2
    cfg.trainer.batch_size = 16
    cfg.trainer.warmup_epochs = 5
    cfg.trainer.inner_epochs = 3
    cfg.trainer.q_epochs = 5
    cfg.trainer.max_generations = 2
    cfg.qmodel.hidden_size = 8
    cfg.qmodel.embed_dim = 8
    cfg.qmodel.vocab_buckets = 256
    cfg.qmodel.max_tokens = 16
    cfg.augment.batches = 2
    cfg.augment.batch_size = 4
    cfg.augment.few_shot = 3
    cfg.augment.neighbors = 2
    cfg.eval.folds = 2
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if name:
            setattr(getattr(cfg, section), name, value)
        else:
            setattr(cfg, section, value)
    validate_config(cfg)
    return cfg


@pytest.fixture
def cfg() -> RunConfig:
    return small_config()


@pytest.fixture
def encoder(cfg) -> HashingEncoder:
    return HashingEncoder(cfg.encoder.dim)
