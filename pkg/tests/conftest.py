import numpy as np
import pytest

from bayesaod import SimConfig, SurrogateModel, SurrogateParams, simulate_block

# A two-channel, two-component surrogate small enough for brute-force oracles.
TOY_E = [[0.8, 0.3], [0.6, 0.2]]
TOY_P = [[0.12, 0.05], [0.10, 0.06]]
TOY_S = [0.03, 0.05]


@pytest.fixture
def toy_params():
    return SurrogateParams(np.array(TOY_E), np.array(TOY_P), np.array(TOY_S))


@pytest.fixture
def toy_model(toy_params):
    return SurrogateModel(toy_params)


@pytest.fixture(scope="session")
def surrogate():
    return SurrogateModel()


@pytest.fixture(scope="session")
def small_sim(surrogate):
    """An 8 x 8 simulated block with its truth."""
    return simulate_block(SimConfig(rows=8, cols=8, seed=11), surrogate)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
