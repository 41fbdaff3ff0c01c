"""Normalized forward/backward HMM filtering and buffered window variants.

Each forward step multiplies the current state distribution by the
transition matrix and the diagonal of emission densities, then renormalizes.
Densities enter through their logs with a max-shift, so a single extreme
observation cannot underflow the step, and the log marginal likelihood is
accumulated as the sum of per-step log normalizers (safe for sequences of
length 1e7).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import NumericalError
from .model import HmmModel, log_density_fn, log_emission_densities


@dataclass
class FilterRun:
    """Forward pass output: per-step filtered distributions (when stored),
    per-step log normalizers, and their sum, the log marginal likelihood."""

    rhos: Optional[np.ndarray]
    per_step_log_norms: Optional[np.ndarray]
    log_likelihood: float
    final_rho: np.ndarray
    n: int


@dataclass
class BackwardRun:
    """Normalized backward probabilities beta_1..beta_n (rows)."""

    betas: np.ndarray


def _step(rho: np.ndarray, transition: np.ndarray, log_dens: np.ndarray):
    """One normalized forward update; returns (new rho, log normalizer)."""
    shift = log_dens.max()
    u = (rho @ transition) * np.exp(log_dens - shift)
    total = u.sum()
    if not total > 0 or not np.isfinite(total):
        raise NumericalError("forward step lost all probability mass")
    return u / total, float(np.log(total) + shift)


def forward_step(rho_prev: np.ndarray, model: HmmModel, y: float):
    """Advance the filtered distribution by one observation.

    Returns ``(rho, log_norm)`` where ``rho`` is the renormalized
    ``rho_prev @ M @ D(y)`` and ``log_norm`` the log of the discarded
    normalization constant.
    """
    y = float(y)
    if not np.isfinite(y):
        raise NumericalError("observation is not finite")
    return _step(np.asarray(rho_prev, dtype=float), model.transition, log_emission_densities(model, y))


def forward_filter(model: HmmModel, obs, store_history: bool = True) -> FilterRun:
    """Run the normalized forward recursion over the whole sequence.

    With ``store_history=False`` only the final distribution and the log
    likelihood are kept (O(K) state); otherwise rho_1..rho_n and the
    per-step log normalizers are returned as arrays.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if n < 1:
        raise ValueError("observation sequence must be nonempty")
    if not np.all(np.isfinite(obs)):
        raise NumericalError("observation sequence contains non-finite values")
    transition = model.transition
    log_dens = log_density_fn(model)
    rho = np.asarray(model.initial, dtype=float)
    rhos = np.empty((n, model.n_states)) if store_history else None
    log_norms = np.empty(n) if store_history else None
    total = 0.0
    for t in range(n):
        rho, ln = _step(rho, transition, log_dens(obs[t]))
        total += ln
        if store_history:
            rhos[t] = rho
            log_norms[t] = ln
    return FilterRun(rhos=rhos, per_step_log_norms=log_norms, log_likelihood=total, final_rho=rho, n=n)


def forward_filter_stream(model: HmmModel, obs: Iterable[float]):
    """Streaming forward pass over any iterable of observations.

    Holds only the current K-vector and the running log likelihood, so the
    memory footprint is independent of the sequence length.  Returns
    ``(final_rho, log_likelihood, n)``.
    """
    transition = model.transition
    log_dens = log_density_fn(model)
    rho = np.asarray(model.initial, dtype=float)
    total = 0.0
    n = 0
    for y in obs:
        y = float(y)
        if not np.isfinite(y):
            raise NumericalError("observation is not finite")
        rho, ln = _step(rho, transition, log_dens(y))
        total += ln
        n += 1
    if n == 0:
        raise ValueError("observation sequence must be nonempty")
    return rho, total, n


def backward_filter(model: HmmModel, obs) -> BackwardRun:
    """Normalized backward recursion; beta_n is the uniform vector and
    beta_i is the renormalized M D(y_{i+1}) beta_{i+1}."""
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if n < 1:
        raise ValueError("observation sequence must be nonempty")
    k = model.n_states
    transition = model.transition
    betas = np.empty((n, k))
    beta = np.full(k, 1.0 / k)
    betas[n - 1] = beta
    log_dens_fn = log_density_fn(model)
    for t in range(n - 2, -1, -1):
        log_dens = log_dens_fn(obs[t + 1])
        w = transition @ (np.exp(log_dens - log_dens.max()) * beta)
        total = w.sum()
        if not total > 0 or not np.isfinite(total):
            raise NumericalError("backward step lost all probability mass")
        beta = w / total
        betas[t] = beta
    return BackwardRun(betas=betas)


def smoothed_posterior(rho_i: np.ndarray, beta_i: np.ndarray) -> np.ndarray:
    """Posterior state distribution given the whole sequence: the
    renormalized entrywise product of forward and backward vectors."""
    prod = np.asarray(rho_i, dtype=float) * np.asarray(beta_i, dtype=float)
    total = prod.sum()
    if not total > 0:
        raise NumericalError("smoothed posterior is identically zero")
    return prod / total


def buffered_forward(model: HmmModel, obs, j: int, b1: int) -> np.ndarray:
    """Approximate rho_{j-1} from the window y_{j-B1}..y_{j-1} only.

    ``j`` is a one-based time index.  The window starts from the model's
    initial distribution; a window reaching past the start of the sequence
    is clamped, so ``b1 >= j-1`` reproduces the exact filter.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if not 1 <= j <= n:
        raise ValueError(f"index j={j} outside 1..{n}")
    if b1 < 0:
        raise ValueError("b1 must be nonnegative")
    lo = max(0, j - 1 - b1)
    rho = np.asarray(model.initial, dtype=float)
    transition = model.transition
    log_dens = log_density_fn(model)
    for t in range(lo, j - 1):
        rho, _ = _step(rho, transition, log_dens(obs[t]))
    return rho


def buffered_backward(model: HmmModel, obs, j: int, b2: int) -> np.ndarray:
    """Approximate beta_j from the window y_{j+1}..y_{j+B2} only.

    ``j`` is one-based; ``b2 = 0`` gives the uniform vector (empty product
    applied to the ones vector) and a window past the end is clamped, so
    ``b2 >= n-j`` reproduces the exact beta_j.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if not 1 <= j <= n:
        raise ValueError(f"index j={j} outside 1..{n}")
    if b2 < 0:
        raise ValueError("b2 must be nonnegative")
    hi = min(n, j + b2)
    k = model.n_states
    transition = model.transition
    beta = np.full(k, 1.0 / k)
    log_dens_fn = log_density_fn(model)
    for t in range(hi - 1, j - 1, -1):
        log_dens = log_dens_fn(obs[t])
        w = transition @ (np.exp(log_dens - log_dens.max()) * beta)
        total = w.sum()
        if not total > 0 or not np.isfinite(total):
            raise NumericalError("backward step lost all probability mass")
        beta = w / total
    return beta
