"""scikit-learn style wrappers around the functional core.

``ForgettingRateEstimator.fit`` measures the filter's forgetting rate from
an observation sequence and exposes ``gap_`` / ``buffer_length_``;
``BufferedSgdHmm.fit`` runs the buffered minibatch SGD driver and exposes
the fitted ``model_`` plus ``score`` / ``predict_proba`` / ``predict`` so
the pieces compose with the usual pipeline tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import lyapunov
from .filtering import backward_filter, forward_filter, smoothed_posterior
from .inference import ParamSelector, SgdConfig, sgd_infer
from .model import HmmModel


def _check_sequence(X) -> np.ndarray:
    """Accept a 1-D sequence or a single-column array of observations."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError("expected a 1-D observation sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError("observations must be finite")
    return arr


def _check_sequences(X) -> list:
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        return [_check_sequence(arr)]
    if arr.ndim == 2:
        return [_check_sequence(row) for row in arr]
    raise ValueError("expected a sequence or a stack of sequences")


class ForgettingRateEstimator(BaseEstimator):
    """Estimate the exponential forgetting rate of a model's filter.

    Parameters
    ----------
    model : HmmModel
        The (fixed) model whose filter is analyzed.
    method : {'jacobian', 'qr', 'trajectory'}
        Jacobian power iteration (default), QR Lyapunov spectrum, or
        two-trajectory decay slopes.  The trajectory method accepts a 2-D
        ``X`` whose rows are independent sequences.
    burn_in : int
        Steps discarded before accumulating.
    epsilon : float
        Forgetting tolerance used to derive ``buffer_length_``.
    direction : {'forward', 'backward'}
        Which filter's rate to measure (jacobian/qr only).
    random_state : int
        Seeds the power iteration's test vector.
    """

    def __init__(self, model, method="jacobian", burn_in=100, epsilon=1e-15,
                 direction="forward", random_state=0):
        self.model = model
        self.method = method
        self.burn_in = burn_in
        self.epsilon = epsilon
        self.direction = direction
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.method == "trajectory":
            seqs = _check_sequences(X)
            p0, p0_alt = lyapunov.default_initial_pair(self.model)
            result = lyapunov.trajectory_gap(self.model, seqs, p0, p0_alt)
        elif self.method in ("jacobian", "qr"):
            obs = _check_sequence(X)
            if self.method == "jacobian":
                result = lyapunov.estimate_gap(
                    self.model, obs, burn_in=self.burn_in,
                    seed=self.random_state, direction=self.direction,
                )
            else:
                spectrum = lyapunov.qr_spectrum(
                    self.model, obs, burn_in=self.burn_in, direction=self.direction,
                )
                self.spectrum_ = spectrum
                result = lyapunov.GapEstimate(
                    gap=float(spectrum[1] - spectrum[0]),
                    iterations=len(obs) - self.burn_in,
                    burn_in=self.burn_in, method="qr", n=len(obs),
                )
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.result_ = result
        self.gap_ = result.gap
        self.buffer_length_ = result.buffer_length(self.epsilon)
        return self


class BufferedSgdHmm(BaseEstimator):
    """Fit free HMM parameters by buffered minibatch normalized SGD.

    ``initial_model`` provides the fixed parameters and the starting point;
    ``free_params`` lists tokens like ``'mu1'``, ``'sigma2'``, ``'row3'``.
    ``buffer`` is either an int (both windows), a (B1, B2) pair, or
    ``'auto'`` to re-estimate both lengths from the forgetting rates once
    per restart.
    """

    def __init__(self, initial_model, free_params=("mu1", "mu2"), eta0=0.05,
                 decay=0.95, steps_per_restart=25, restart_threshold=0.02,
                 batch_size=100, buffer="auto", epsilon=1e-10, max_restarts=40,
                 decay_scope="restart", random_state=0):
        self.initial_model = initial_model
        self.free_params = free_params
        self.eta0 = eta0
        self.decay = decay
        self.steps_per_restart = steps_per_restart
        self.restart_threshold = restart_threshold
        self.batch_size = batch_size
        self.buffer = buffer
        self.epsilon = epsilon
        self.max_restarts = max_restarts
        self.decay_scope = decay_scope
        self.random_state = random_state

    def _config(self) -> SgdConfig:
        if self.buffer == "auto":
            b1 = b2 = None
        elif np.isscalar(self.buffer):
            b1 = b2 = int(self.buffer)
        else:
            b1, b2 = (int(v) for v in self.buffer)
        return SgdConfig(
            eta0=self.eta0, decay=self.decay, steps_per_restart=self.steps_per_restart,
            restart_threshold=self.restart_threshold, batch_size=self.batch_size,
            b1=b1, b2=b2, epsilon=self.epsilon, seed=self.random_state,
            max_restarts=self.max_restarts, decay_scope=self.decay_scope,
        )

    def fit(self, X, y=None):
        obs = _check_sequence(X)
        selector = ParamSelector.from_tokens(self.free_params, self.initial_model.n_states)
        result = sgd_infer(self.initial_model, obs, selector, self._config())
        self.model_ = result.model
        self.result_ = result
        self.n_restarts_ = result.restarts
        self.theta_ = result.theta
        return self

    def _fitted_model(self) -> HmmModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit first")
        return self.model_

    def score(self, X, y=None) -> float:
        """Average log-likelihood per observation under the fitted model."""
        obs = _check_sequence(X)
        run = forward_filter(self._fitted_model(), obs, store_history=False)
        return run.log_likelihood / len(obs)

    def predict_proba(self, X) -> np.ndarray:
        """Smoothed posterior state probabilities, one row per observation."""
        obs = _check_sequence(X)
        model = self._fitted_model()
        run = forward_filter(model, obs, store_history=True)
        back = backward_filter(model, obs)
        return np.vstack([
            smoothed_posterior(run.rhos[t], back.betas[t]) for t in range(len(obs))
        ])

    def predict(self, X) -> np.ndarray:
        """Pointwise most probable state from the smoothed posterior."""
        return self.predict_proba(X).argmax(axis=1)
