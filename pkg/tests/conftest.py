import numpy as np
import pytest

from nibkit import ModelConfig, init_toy

CANONICAL_SEED = 4


@pytest.fixture(scope="session")
def toy_model():
    """Canonical toy fixture shared across the suite (read-only forwards)."""
    return init_toy(CANONICAL_SEED, ModelConfig())


@pytest.fixture(scope="session")
def tiny_config():
    """Smallest legal config; keeps finite-difference oracles affordable."""
    return ModelConfig(
        image_size=8, channels=2, patch=4, d_model=8, heads=2, layers=2,
        proj_dim=4, vocab=16, max_len=5,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return init_toy(7, tiny_config)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def sample_pair():
    r = np.random.default_rng(123)
    image = r.uniform(0.0, 1.0, (3, 32, 32))
    tokens = (5, 9, 33, 2, 17)
    return image, tokens
