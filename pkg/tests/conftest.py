import numpy as np
import pytest

from hmmgap import HmmModel, sample_sequence

# Near-cyclic three-state chain with unit-variance Gaussian emissions; the
# slow forgetting rate (about -0.19) makes every estimator's behavior easy
# to resolve, so most tests run against this model.
THREE_STATE = {
    "transition": [[0.005, 0.99, 0.005], [0.01, 0.03, 0.96], [0.95, 0.005, 0.045]],
    "means": [0.0, 0.5, -0.5],
    "stds": [1.0, 1.0, 1.0],
}


@pytest.fixture(scope="session")
def three_state() -> HmmModel:
    return HmmModel.from_dict(THREE_STATE)


@pytest.fixture(scope="session")
def obs_10k(three_state):
    return sample_sequence(three_state, 10_000, seed=7).observations


@pytest.fixture(scope="session")
def obs_100k(three_state):
    return sample_sequence(three_state, 100_000, seed=11).observations


def near_cyclic_model(k: int, seed: int) -> HmmModel:
    """Random primitive model with a moderate forgetting rate: a cyclic
    permutation blended with positive Dirichlet haze."""
    rng = np.random.default_rng(seed)
    perm = np.roll(np.eye(k), 1, axis=1)
    a = rng.uniform(0.08, 0.3)
    transition = (1 - a) * perm + a * rng.dirichlet(np.ones(k), size=k)
    means = rng.uniform(-1.0, 1.0, size=k)
    stds = rng.uniform(0.7, 1.3, size=k)
    return HmmModel(transition, means, stds, np.full(k, 1.0 / k))


def positive_model(k: int, seed: int) -> HmmModel:
    """Random entrywise-positive stochastic matrix with Gaussian emissions."""
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(k), size=k)
    means = rng.uniform(-1.5, 1.5, size=k)
    stds = rng.uniform(0.6, 1.4, size=k)
    return HmmModel(transition, means, stds, np.full(k, 1.0 / k))


def seed_family(base: int, count: int):
    return [int(np.random.SeedSequence(base, spawn_key=(i,)).generate_state(1)[0]) for i in range(count)]
