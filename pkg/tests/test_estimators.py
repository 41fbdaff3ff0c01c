import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hmmgap import BufferedSgdHmm, ForgettingRateEstimator, sample_sequence
from conftest import seed_family


def test_forgetting_rate_jacobian(three_state, obs_10k):
    est = ForgettingRateEstimator(three_state, method="jacobian", epsilon=1e-15)
    est.fit(obs_10k)
    assert -0.22 <= est.gap_ <= -0.17
    assert 160 <= est.buffer_length_ <= 200
    assert est.result_.method == "jacobian_power"


def test_forgetting_rate_qr(three_state, obs_10k):
    est = ForgettingRateEstimator(three_state, method="qr").fit(obs_10k)
    assert est.spectrum_.shape == (3,)
    assert est.gap_ == pytest.approx(est.spectrum_[1] - est.spectrum_[0], rel=1e-12)


def test_forgetting_rate_trajectory(three_state):
    seqs = np.vstack([
        sample_sequence(three_state, 250, seed=s).observations for s in seed_family(31, 80)
    ])
    est = ForgettingRateEstimator(three_state, method="trajectory").fit(seqs)
    assert -0.23 <= est.gap_ <= -0.16


def test_forgetting_rate_backward(three_state, obs_10k):
    est = ForgettingRateEstimator(three_state, direction="backward").fit(obs_10k)
    assert est.gap_ < 0


def test_forgetting_rate_unknown_method(three_state, obs_10k):
    with pytest.raises(ValueError):
        ForgettingRateEstimator(three_state, method="magic").fit(obs_10k)


def test_estimator_params_roundtrip(three_state):
    est = ForgettingRateEstimator(three_state, burn_in=33)
    cloned = clone(est)
    assert cloned.get_params()["burn_in"] == 33
    cloned.set_params(burn_in=44)
    assert cloned.burn_in == 44


def test_sgd_estimator_fit_and_views(three_state):
    obs = sample_sequence(three_state, 12_000, seed=40).observations
    start = three_state
    est = BufferedSgdHmm(
        start, free_params=("mu1", "mu2"), buffer=120, batch_size=40,
        steps_per_restart=5, max_restarts=3, restart_threshold=0.05, random_state=0,
    )
    est.fit(obs)
    assert hasattr(est, "model_")
    short = obs[:400]
    assert np.isfinite(est.score(short))
    proba = est.predict_proba(short)
    assert proba.shape == (400, 3)
    assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-12
    states = est.predict(short)
    assert states.shape == (400,)
    assert set(np.unique(states)) <= {0, 1, 2}


def test_sgd_estimator_buffer_pair(three_state):
    obs = sample_sequence(three_state, 8_000, seed=41).observations
    est = BufferedSgdHmm(three_state, free_params=("mu1",), buffer=(60, 90),
                         batch_size=20, steps_per_restart=3, max_restarts=1,
                         random_state=1)
    est.fit(obs)
    assert est.result_.buffers == (60, 90)


def test_sgd_estimator_requires_fit(three_state, obs_10k):
    est = BufferedSgdHmm(three_state)
    with pytest.raises(NotFittedError):
        est.score(obs_10k[:100])


def test_sequence_validation(three_state):
    est = ForgettingRateEstimator(three_state)
    with pytest.raises(ValueError):
        est.fit(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).reshape(3, 2, 1))
    with pytest.raises(ValueError):
        est.fit(np.array([1.0, np.inf]))
