import numpy as np
import pytest

from emodur.corpus import GeneratorConfig, generate
from emodur.predictor import DurationModel, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def model_config():
    return ModelConfig(vocabulary=8, unit_dim=4, hidden=6, kernel_size=3)


@pytest.fixture
def model(model_config):
    return DurationModel.init(model_config, seed=3)


@pytest.fixture
def make_corpus():
    """Factory of small synthetic corpora over a vocabulary of 8 units."""

    def factory(n_utterances=24, units_per_utt=6, seed=0, **kwargs):
        options = dict(vocabulary=8, n_speakers=3)
        options.update(kwargs)
        cfg = GeneratorConfig(n_utterances=n_utterances, units_per_utt=units_per_utt, seed=seed, **options)
        return generate(cfg)

    return factory
