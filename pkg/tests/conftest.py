import numpy as np
import pytest

from models.agents import DqnHyperparams
from models.mdp_env import EnvConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_env():
    """Oracle-sized network: 2 candidates, 3 SNR levels, short episodes."""
    return EnvConfig(L=2, H=3, T=5, ia_max_iter=200)


@pytest.fixture
def tiny_hyper():
    return DqnHyperparams(episodes=4, warmup=0, batch_size=2, hidden=(8,), learning_rate=1e-2)
