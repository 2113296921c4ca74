import numpy as np
import pytest

from flux.services.fluxvit import FluxViTConfig
from flux.services.sampling import SamplerConfig
from flux.services.videogen import GenSpec
from flux.utils import setup_logging


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_gen():
    """8 frames of 28x28: a 2x2 token grid per frame at patch 14."""
    return GenSpec(frames=8, height=28, width=28, sprite_size=(4, 8), speed=(1.0, 2.0))


@pytest.fixture
def tiny_sampler():
    """Frames 4..8 at a single 28px resolution; pools of 16 to 32 tokens."""
    return SamplerConfig(f_min=4, f_max=8, t_step=2, r_min=28, r_max=28, r_step=14, pool_min=16, pool_max=None)


@pytest.fixture
def tiny_model_cfg():
    return FluxViTConfig(embed_dim=16, num_heads=2, depth=1, max_grid=(8, 2, 2))


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    setup_logging("WARNING")
