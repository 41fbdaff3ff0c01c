"""Forgetting-rate estimation for the filter's random matrix products.

The filtered distribution, written in log-ratio coordinates relative to its
last component, evolves as a random translation plus a deterministic map
that depends only on the transition matrix.  The Jacobian of that map is
available in closed form, so the top Lyapunov exponent of the Jacobian
cocycle (the forgetting rate, a negative number for primitive transition
matrices with positive emissions) can be accumulated with a single test
vector in O(K^2) per step.

Three independent estimates of the same rate are provided: the Jacobian
power iteration (:func:`estimate_gap`), a QR-reorthonormalization Lyapunov
spectrum of the raw matrix products (:func:`qr_spectrum`), and the decay
slope of two filters driven by the same observations from different starting
points (:func:`trajectory_decay` / :func:`trajectory_gap`).  The Birkhoff
contraction coefficient (:func:`birkhoff_tau`) gives an a-priori upper bound
``log tau(M)`` on the rate for entrywise-positive transition matrices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError
from .filtering import _step
from .model import HmmModel, log_density_fn, log_emission_densities

# Distributions are floored here before taking log ratios; only the first few
# steps of a filter started on the simplex boundary can ever hit the floor.
PROJECT_FLOOR = 1e-300


@dataclass
class GapEstimate:
    """An estimated forgetting rate (top-two Lyapunov exponent difference).

    ``iterations`` counts the accumulated (post-burn-in) steps.  The rate is
    negative for usable models; ``-inf`` signals one-step forgetting
    (rank-one transition dynamics).
    """

    gap: float
    iterations: int
    burn_in: int
    method: str
    n: int
    floor_hits: int = 0

    def buffer_length(self, epsilon: float) -> int:
        return buffer_length(self.gap, epsilon)


def to_log_ratio(probs: np.ndarray) -> np.ndarray:
    """Map an interior simplex point to log ratios against its last entry."""
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0):
        raise ValueError("log-ratio coordinates need a strictly interior point")
    return np.log(p[:-1]) - np.log(p[-1])


def from_log_ratio(r: np.ndarray) -> np.ndarray:
    """Inverse map: softmax of (r_1..r_{K-1}, 0), overflow-safe."""
    r_full = np.append(np.asarray(r, dtype=float), 0.0)
    e = np.exp(r_full - r_full.max())
    return e / e.sum()


def _map_for_matrix(transition: np.ndarray, r: np.ndarray) -> np.ndarray:
    r_full = np.append(np.asarray(r, dtype=float), 0.0)
    with np.errstate(divide="ignore"):
        vals = logsumexp(r_full[:, None], b=transition, axis=0)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("transition matrix has an effectively zero column")
    return vals[:-1] - vals[-1]


def _jacobian_for_matrix(transition: np.ndarray, r: np.ndarray) -> np.ndarray:
    r_full = np.append(np.asarray(r, dtype=float), 0.0)
    w = np.exp(r_full - r_full.max())
    denom = w @ transition
    if np.any(denom <= 0):
        raise NumericalError("transition matrix has an effectively zero column")
    scaled = (transition.T * w[None, :]) / denom[:, None]
    return scaled[:-1, :-1] - scaled[-1, :-1][None, :]


def logratio_map(model: HmmModel, r: np.ndarray) -> np.ndarray:
    """Deterministic part of the log-ratio update (transition matrix only)."""
    return _map_for_matrix(model.transition, r)


def emission_shift(model: HmmModel, y: float) -> np.ndarray:
    """Random translation of the log-ratio update: per-state emission
    log-density relative to the last state, computed from logs directly."""
    log_dens = log_emission_densities(model, float(y))
    return log_dens[:-1] - log_dens[-1]


def logratio_jacobian(model: HmmModel, r: np.ndarray) -> np.ndarray:
    """(K-1)x(K-1) Jacobian of the log-ratio update; the translation drops
    out, so it depends on the transition matrix and the current point only."""
    return _jacobian_for_matrix(model.transition, r)


def estimate_gap(
    model: HmmModel,
    obs,
    burn_in: int = 100,
    seed: int = 0,
    direction: str = "forward",
) -> GapEstimate:
    """Forgetting rate by Jacobian power iteration along a filter run.

    Runs the (forward or backward) filter over ``obs``, applies the log-ratio
    Jacobian at each visited point to one unit test vector, and averages the
    per-step log growth after ``burn_in`` steps.  The test vector starts at a
    seeded random direction on the unit sphere.  A test vector collapsing to
    exactly zero reports the ``-inf`` sentinel (one-step forgetting).
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    if n <= burn_in:
        raise ValueError("need more observations than burn-in steps")
    k = model.n_states
    if k == 1:
        return GapEstimate(gap=-np.inf, iterations=0, burn_in=burn_in, method="jacobian_power", n=n)

    rng = np.random.default_rng(seed)
    e = rng.standard_normal(k - 1)
    e = e / np.linalg.norm(e)

    transition = model.transition
    acc = 0.0
    steps = 0
    floor_hits = 0

    def _floored_ratio(p):
        nonlocal floor_hits
        floor_hits += int(np.count_nonzero(p < PROJECT_FLOOR))
        p = np.maximum(p, PROJECT_FLOOR)
        return np.log(p[:-1]) - np.log(p[-1])

    log_dens_fn = log_density_fn(model)
    if direction == "forward":
        rho = np.asarray(model.initial, dtype=float)
        for t in range(n):
            rho, _ = _step(rho, transition, log_dens_fn(obs[t]))
            e = _jacobian_for_matrix(transition, _floored_ratio(rho)) @ e
            norm = float(np.linalg.norm(e))
            if norm == 0.0:
                return GapEstimate(-np.inf, steps, burn_in, "jacobian_power", n, floor_hits)
            if t >= burn_in:
                acc += math.log(norm)
                steps += 1
            e /= norm
    else:
        transition_t = transition.T
        beta = np.full(k, 1.0 / k)
        r = np.zeros(k - 1)
        done = 0
        for i in range(n - 1, 0, -1):
            log_dens = log_dens_fn(obs[i])
            u = r + (log_dens[:-1] - log_dens[-1])
            e = _jacobian_for_matrix(transition_t, u) @ e
            norm = float(np.linalg.norm(e))
            if norm == 0.0:
                return GapEstimate(-np.inf, steps, burn_in, "jacobian_power", n, floor_hits)
            if done >= burn_in:
                acc += math.log(norm)
                steps += 1
            e /= norm
            done += 1
            w = transition @ (np.exp(log_dens - log_dens.max()) * beta)
            beta = w / w.sum()
            r = _floored_ratio(beta)

    if not np.isfinite(acc):
        raise NumericalError("gap accumulation became non-finite")
    if steps == 0:
        raise ValueError("no post-burn-in steps accumulated")
    return GapEstimate(acc / steps, steps, burn_in, "jacobian_power", n, floor_hits)


def buffer_length(gap: float, epsilon: float) -> int:
    """Window length needed for forgetting error ``epsilon``: the ceiling of
    ``ln(epsilon) / gap``.  A ``-inf`` gap (one-step forgetting) gives 1."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if math.isnan(gap) or gap >= 0.0:
        raise ValueError("no forgetting detected: gap must be negative")
    if math.isinf(gap):
        return 1
    return max(1, math.ceil(math.log(epsilon) / gap))


def qr_spectrum(
    model: HmmModel, obs, burn_in: int = 100, direction: str = "forward"
) -> np.ndarray:
    """Full Lyapunov spectrum of the filter's matrix products, descending.

    Classic QR reorthonormalization: push a K-frame through the per-step
    matrices and average the logs of the R diagonal after burn-in.  This is
    the O(K^3)-per-step verification oracle for :func:`estimate_gap`; the
    forgetting rate is ``spectrum[1] - spectrum[0]``.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    if n <= burn_in:
        raise ValueError("need more observations than burn-in steps")
    k = model.n_states
    transition = model.transition
    q = np.eye(k)
    acc = np.zeros(k)
    steps = 0
    warned = False
    log_dens_fn = log_density_fn(model)
    order = range(n) if direction == "forward" else range(n - 1, -1, -1)
    for t in order:
        log_dens = log_dens_fn(obs[t])
        shift = log_dens.max()
        scaled = np.exp(log_dens - shift)
        if direction == "forward":
            # Row dynamics v <- v M D as column dynamics (M D)^T v.
            step_matrix = (transition * scaled[None, :]).T
        else:
            step_matrix = transition * scaled[None, :]
        q, r = np.linalg.qr(step_matrix @ q)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q = q * signs[None, :]
        diag = np.abs(np.diag(r))
        if np.any(diag == 0) and not warned:
            warnings.warn("QR frame collapsed; affected exponents reported as -inf")
            warned = True
        if (t if direction == "forward" else (n - 1 - t)) >= burn_in:
            with np.errstate(divide="ignore"):
                acc += np.log(diag) + shift
            steps += 1
    return np.sort(acc / steps)[::-1]


@dataclass
class DecaySeries:
    """Distance between two synchronized filter runs, step by step.

    ``normalized`` holds ln(distance)/step, the quantity whose limit is the
    forgetting rate; the series stops where the distance drops below the
    cutoff and becomes numerically meaningless.
    """

    steps: np.ndarray
    distances: np.ndarray
    normalized: np.ndarray


def trajectory_decay(
    model: HmmModel, obs, p0, p0_alt, cutoff: float | None = 1e-14
) -> DecaySeries:
    """Drive two filters with the same observations from two starting
    distributions and record the 2-norm of their difference per step."""
    obs = np.asarray(obs, dtype=float)
    p = np.asarray(p0, dtype=float)
    q = np.asarray(p0_alt, dtype=float)
    transition = model.transition
    steps, dists = [], []
    log_dens_fn = log_density_fn(model)
    for t in range(obs.shape[0]):
        log_dens = log_dens_fn(obs[t])
        p, _ = _step(p, transition, log_dens)
        q, _ = _step(q, transition, log_dens)
        d = float(np.linalg.norm(p - q))
        if cutoff is not None and d < cutoff:
            break
        steps.append(t + 1)
        dists.append(d)
    steps = np.asarray(steps, dtype=int)
    dists = np.asarray(dists, dtype=float)
    with np.errstate(divide="ignore"):
        normalized = np.where(dists > 0, np.log(np.maximum(dists, 1e-320)), -np.inf)
    normalized = normalized / np.maximum(steps, 1)
    return DecaySeries(steps=steps, distances=dists, normalized=normalized)


def pair_distance_matrix(model: HmmModel, obs_list, p0, p0_alt, n_steps: int) -> np.ndarray:
    """Stack ``trajectory_decay`` distances (no cutoff) for several
    observation sequences into an (n_seq, n_steps) matrix."""
    out = np.empty((len(obs_list), n_steps))
    for i, obs in enumerate(obs_list):
        series = trajectory_decay(model, np.asarray(obs)[:n_steps], p0, p0_alt, cutoff=None)
        out[i] = series.distances
    return out


def log_linear_slope(x, y) -> float:
    """Least-squares slope of ln(y) against x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.polyfit(x, np.log(y), 1)[0])


def trajectory_gap(
    model: HmmModel,
    obs_list,
    p0,
    p0_alt,
    skip: int = 20,
    floor: float = 1e-12,
) -> GapEstimate:
    """Forgetting rate from two-trajectory decay slopes.

    Fits ln(distance) against the step index for each sequence (after
    ``skip`` steps, before the distance reaches ``floor``) and averages the
    per-sequence slopes; each realization's slope converges to the rate, so
    the average estimates the same almost-sure quantity as the other methods.
    """
    slopes = []
    total = 0
    for obs in obs_list:
        series = trajectory_decay(model, obs, p0, p0_alt, cutoff=floor)
        if series.steps.size == 0:
            continue
        # fast-forgetting models hit the floor early; shrink the discarded
        # transient so at least a quarter of the usable window survives
        eff_skip = min(skip, max(2, int(series.steps[-1] * 0.25)))
        keep = (series.steps > eff_skip) & (series.distances > 0)
        if np.count_nonzero(keep) < 8:
            continue
        slopes.append(log_linear_slope(series.steps[keep], series.distances[keep]))
        total += int(np.count_nonzero(keep))
    if not slopes:
        raise NumericalError("no usable decay window; distances collapsed too fast")
    return GapEstimate(
        gap=float(np.mean(slopes)), iterations=total, burn_in=skip, method="trajectory",
        n=sum(len(o) for o in obs_list),
    )


def default_initial_pair(model: HmmModel):
    """Two distinct interior starting distributions for decay experiments."""
    k = model.n_states
    p0 = np.asarray(model.initial, dtype=float)
    if np.any(p0 <= 0):
        p0 = np.full(k, 1.0 / k)
    alt = np.arange(1.0, k + 1.0)
    alt = alt / alt.sum()
    if np.allclose(alt, p0):
        alt = alt[::-1].copy()
    return p0, alt


def hilbert_metric(x, y) -> float:
    """Projective distance ln(max_i x_i/y_i / min_j x_j/y_j) on positive rays."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("hilbert metric requires strictly positive vectors")
    ratios = x / y
    return float(np.log(ratios.max() / ratios.min()))


def birkhoff_tau(transition) -> float:
    """Birkhoff contraction coefficient tau(M) in [0, 1).

    For an entrywise-positive matrix: the minimum cross ratio
    ``M_pq M_rs / (M_rq M_ps)`` over all 2x2 sub-patterns gives phi(M), and
    ``tau = (1 - sqrt(phi)) / (1 + sqrt(phi))``.  A row mixing zero and
    positive entries forces phi = 0; that case returns 1.0 (the contraction
    bound is vacuous) with a warning.
    """
    m = np.asarray(transition, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(m < 0):
        raise ValueError("matrix must be nonnegative")
    if np.any((m > 0).sum(axis=1) == 0):
        raise ValueError("matrix has an all-zero row")
    if np.any(m == 0):
        warnings.warn("matrix has zero entries: tau(M) = 1, contraction bound vacuous")
        return 1.0
    k = m.shape[0]
    num = m[:, None, :, None] * m[None, :, None, :]
    den = m[None, :, :, None] * m[:, None, None, :]
    idx = np.arange(k)
    mask = (idx[:, None] != idx[None, :])[:, :, None, None] & (
        idx[:, None] != idx[None, :]
    )[None, None, :, :]
    phi = float((num / den)[mask].min())
    root = math.sqrt(phi)
    return (1.0 - root) / (1.0 + root)
