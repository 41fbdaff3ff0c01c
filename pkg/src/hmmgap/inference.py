"""Gradient-based MLE for HMM parameters.

The log-likelihood gradient decomposes into one term per time step, each a
ratio of window quantities around that step.  The exact gradient sums all
terms using full forward/backward passes; the minibatch estimator samples a
few indices, rebuilds the forward and backward vectors from short buffered
windows, and rescales, so its cost is proportional to (B1+B2)*s rather than
the sequence length.  The SGD driver takes normalized-gradient steps with a
decaying rate and restarts until the parameters settle.

Free parameters are packed as: means directly, stds through log(sigma),
transition rows through softmax logits, so iterates stay feasible without
projections.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import lyapunov
from .errors import InferenceDivergedError, ModelError, NumericalError
from .filtering import backward_filter, buffered_backward, buffered_forward, forward_filter
from .model import HmmModel, log_emission_densities

_TOKEN = re.compile(r"^(mu|sigma|row)([0-9]+)$")


@dataclass(frozen=True)
class ParamSelector:
    """Which parameters are free, with their packing order.

    Indices are 0-based internally; tokens like ``mu1``/``sigma2``/``row3``
    use the 1-based state labels of the model file.  The packed vector lays
    out the listed means, then log stds, then K softmax logits per free
    transition row.
    """

    mu: tuple = ()
    sigma: tuple = ()
    rows: tuple = ()

    @classmethod
    def from_tokens(cls, tokens, n_states: int) -> "ParamSelector":
        mu, sigma, rows = [], [], []
        for token in tokens:
            m = _TOKEN.match(token.strip())
            if not m:
                raise ValueError(f"unrecognized free-parameter token {token!r}")
            kind, num = m.group(1), int(m.group(2))
            if not 1 <= num <= n_states:
                raise ValueError(f"{token!r}: state index outside 1..{n_states}")
            {"mu": mu, "sigma": sigma, "row": rows}[kind].append(num - 1)
        return cls(mu=tuple(mu), sigma=tuple(sigma), rows=tuple(rows))

    def size(self, n_states: int) -> int:
        return len(self.mu) + len(self.sigma) + n_states * len(self.rows)

    def labels(self, n_states: int):
        out = [f"mu{i + 1}" for i in self.mu]
        out += [f"sigma{i + 1}" for i in self.sigma]
        for r in self.rows:
            out += [f"row{r + 1}_{c + 1}" for c in range(n_states)]
        return out

    def pack(self, model: HmmModel) -> np.ndarray:
        parts = [model.means[list(self.mu)]]
        parts.append(np.log(model.stds[list(self.sigma)]))
        for r in self.rows:
            row = model.transition[r]
            if np.any(row <= 0):
                raise ModelError(f"free transition row {r + 1} must be strictly positive")
            parts.append(np.log(row))
        return np.concatenate(parts) if parts else np.array([])

    def unpack(self, model: HmmModel, theta: np.ndarray) -> HmmModel:
        theta = np.asarray(theta, dtype=float)
        k = model.n_states
        means = np.array(model.means)
        stds = np.array(model.stds)
        transition = np.array(model.transition)
        pos = 0
        for i in self.mu:
            means[i] = theta[pos]
            pos += 1
        for i in self.sigma:
            stds[i] = math.exp(theta[pos])
            pos += 1
        for r in self.rows:
            z = theta[pos : pos + k]
            e = np.exp(z - z.max())
            transition[r] = e / e.sum()
            pos += k
        return replace(model, means=means, stds=stds, transition=transition)


def d_emission(model: HmmModel, state: int, y: float):
    """Partial derivatives of the Gaussian emission density at one state:
    returns (d/d mu, d/d sigma)."""
    mu = model.means[state]
    sigma = model.stds[state]
    z = (y - mu) / sigma
    dens = math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return dens * (y - mu) / sigma**2, dens * ((y - mu) ** 2 / sigma**3 - 1.0 / sigma)


def _term_from_parts(model, selector, y, rho_prev, beta, log_dens):
    """One gradient summand given the surrounding window vectors.

    Densities are used through exp(log_dens - max); the shift cancels between
    numerator and denominator, so extreme observations stay finite.
    """
    transition = model.transition
    k = model.n_states
    shift = log_dens.max()
    e = np.exp(log_dens - shift)
    rho_m = rho_prev @ transition
    denom = float((rho_m * e * beta).sum())
    if not denom > 0:
        raise NumericalError("gradient term denominator is not positive")
    out = np.empty(selector.size(k))
    pos = 0
    for i in selector.mu:
        coef = (y - model.means[i]) / model.stds[i] ** 2
        out[pos] = rho_m[i] * e[i] * coef * beta[i] / denom
        pos += 1
    for i in selector.sigma:
        sd = model.stds[i]
        coef = (y - model.means[i]) ** 2 / sd**3 - 1.0 / sd
        # packed parameter is log sigma
        out[pos] = rho_m[i] * e[i] * coef * beta[i] / denom * sd
        pos += 1
    for r in selector.rows:
        g = rho_prev[r] * e * beta / denom  # d term / d M_{r,:}
        inner = float((transition[r] * g).sum())
        out[pos : pos + k] = transition[r] * (g - inner)
        pos += k
    return out


def term_gradient(model, obs, j: int, rho_prev, beta_j, selector: ParamSelector):
    """Gradient summand for one-based time index j, using the supplied
    forward vector rho_{j-1} and backward vector beta_j."""
    obs = np.asarray(obs, dtype=float)
    if not 1 <= j <= obs.shape[0]:
        raise ValueError(f"index j={j} outside 1..{obs.shape[0]}")
    y = float(obs[j - 1])
    return _term_from_parts(
        model, selector, y,
        np.asarray(rho_prev, dtype=float), np.asarray(beta_j, dtype=float),
        log_emission_densities(model, y),
    )


def full_gradient(model, obs, selector: ParamSelector, j_range=None) -> np.ndarray:
    """Exact gradient of the log-likelihood in the packed parameterization,
    summing every per-step term with exact forward/backward vectors.

    ``j_range=(lo, hi)`` restricts the sum to one-based indices lo..hi.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    lo, hi = (1, n) if j_range is None else j_range
    if not (1 <= lo <= hi <= n):
        raise ValueError("invalid j_range")
    run = forward_filter(model, obs, store_history=True)
    back = backward_filter(model, obs)
    initial = np.asarray(model.initial, dtype=float)
    total = np.zeros(selector.size(model.n_states))
    for j in range(lo, hi + 1):
        rho_prev = initial if j == 1 else run.rhos[j - 2]
        total += term_gradient(model, obs, j, rho_prev, back.betas[j - 1], selector)
    return total


@dataclass
class GradientReport:
    """Minibatch estimate with its ingredients.

    ``per_term`` holds the raw (unscaled) per-index summands, ``variance``
    the per-component estimator variance (with-replacement approximation),
    ``matvecs`` the number of K-vector/K-matrix products spent, and
    ``excluded_fraction`` the share of terms outside the sampling domain
    (the buffered boundary the estimator never sees).
    """

    gradient: np.ndarray
    per_term: np.ndarray
    indices: np.ndarray
    variance: np.ndarray
    matvecs: int
    scale: float
    excluded_fraction: float


def _batch_terms(model, obs, js, b1, b2, selector):
    """Vectorized buffered terms for indices whose windows fit unclamped.

    Steps all s forward windows (and then all backward windows) in lockstep
    as (s, K) blocks; one block step counts as s matrix-vector products.
    """
    obs = np.asarray(obs, dtype=float)
    transition = model.transition
    means, stds = model.means, model.stds
    k = model.n_states
    js0 = np.asarray(js, dtype=int) - 1
    s = js0.shape[0]
    log_norm_const = -np.log(stds) - 0.5 * math.log(2.0 * math.pi)

    def block_log_dens(ys):
        z = (ys[:, None] - means[None, :]) / stds[None, :]
        return -0.5 * z * z + log_norm_const[None, :]

    matvecs = 0
    rho = np.tile(np.asarray(model.initial, dtype=float), (s, 1))
    for t in range(b1):
        ld = block_log_dens(obs[js0 - b1 + t])
        u = (rho @ transition) * np.exp(ld - ld.max(axis=1, keepdims=True))
        rho = u / u.sum(axis=1, keepdims=True)
        matvecs += s
    beta = np.full((s, k), 1.0 / k)
    for t in range(b2 - 1, -1, -1):
        ld = block_log_dens(obs[js0 + 1 + t])
        w = (np.exp(ld - ld.max(axis=1, keepdims=True)) * beta) @ transition.T
        beta = w / w.sum(axis=1, keepdims=True)
        matvecs += s

    ys = obs[js0]
    ld = block_log_dens(ys)
    e = np.exp(ld - ld.max(axis=1, keepdims=True))
    rho_m = rho @ transition
    matvecs += s
    denom = (rho_m * e * beta).sum(axis=1)
    if not np.all(denom > 0):
        raise NumericalError("gradient term denominator is not positive")

    terms = np.empty((s, selector.size(k)))
    pos = 0
    for i in selector.mu:
        coef = (ys - means[i]) / stds[i] ** 2
        terms[:, pos] = rho_m[:, i] * e[:, i] * coef * beta[:, i] / denom
        pos += 1
    for i in selector.sigma:
        sd = stds[i]
        coef = (ys - means[i]) ** 2 / sd**3 - 1.0 / sd
        terms[:, pos] = rho_m[:, i] * e[:, i] * coef * beta[:, i] / denom * sd
        pos += 1
    for r in selector.rows:
        g = rho[:, r : r + 1] * e * beta / denom[:, None]
        inner = (g * transition[r][None, :]).sum(axis=1)
        terms[:, pos : pos + k] = transition[r][None, :] * (g - inner[:, None])
        pos += k
    return terms, matvecs


def _scalar_terms(model, obs, js, b1, b2, selector):
    """Per-index buffered terms via the window routines (handles clamping)."""
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    terms = np.empty((len(js), selector.size(model.n_states)))
    matvecs = 0
    for row, j in enumerate(js):
        rho_prev = buffered_forward(model, obs, int(j), b1)
        beta = buffered_backward(model, obs, int(j), b2)
        terms[row] = term_gradient(model, obs, int(j), rho_prev, beta, selector)
        matvecs += min(b1, j - 1) + min(b2, n - j) + 1
    return terms, matvecs


def minibatch_gradient(
    model,
    obs,
    selector: ParamSelector,
    s: int,
    b1: int,
    b2: int,
    seed: int = 0,
    indices=None,
    j_range=None,
    no_overlap: bool = False,
) -> GradientReport:
    """Buffered minibatch estimate of the log-likelihood gradient.

    Draws ``s`` one-based indices uniformly without replacement from
    ``[B1+1, n-B2-1]`` (or uses ``indices`` verbatim), computes each term
    from its forward/backward buffers, and scales the sum by (domain size)/s
    so the estimator is exactly unbiased for the restricted-range gradient.
    Deterministic given the seed; terms are summed in ascending index order.
    """
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    lo, hi = (b1 + 1, n - b2 - 1) if j_range is None else j_range
    m = hi - lo + 1
    if m < 1:
        raise ValueError("sampling domain [B1+1, n-B2-1] is empty")
    if indices is None:
        if not 1 <= s <= m:
            raise ValueError(f"batch size {s} outside 1..{m}")
        rng = np.random.default_rng(seed)
        if no_overlap:
            js = _sample_non_overlapping(rng, lo, hi, s, b1 + b2)
        else:
            js = np.sort(rng.choice(m, size=s, replace=False) + lo)
    else:
        js = np.sort(np.asarray(indices, dtype=int))
        if js.size == 0 or js.min() < 1 or js.max() > n:
            raise ValueError("explicit indices outside 1..n")
        s = js.size

    if js.min() - 1 - b1 >= 0 and js.max() + b2 <= n:
        terms, matvecs = _batch_terms(model, obs, js, b1, b2, selector)
    else:
        terms, matvecs = _scalar_terms(model, obs, js, b1, b2, selector)

    scale = m / s
    gradient = scale * terms.sum(axis=0)
    if s > 1:
        variance = (m * m / s) * terms.var(axis=0, ddof=1)
    else:
        variance = np.full(terms.shape[1], np.nan)
    return GradientReport(
        gradient=gradient,
        per_term=terms,
        indices=js,
        variance=variance,
        matvecs=matvecs,
        scale=scale,
        excluded_fraction=(n - m) / n,
    )


def _sample_non_overlapping(rng, lo, hi, s, min_gap):
    """Greedy resampling of indices whose windows do not overlap."""
    chosen: list[int] = []
    for _ in range(1000 * s):
        j = int(rng.integers(lo, hi + 1))
        if all(abs(j - c) > min_gap for c in chosen):
            chosen.append(j)
            if len(chosen) == s:
                return np.sort(np.asarray(chosen))
    raise ValueError("could not place non-overlapping windows; reduce s or buffers")


@dataclass
class SgdConfig:
    """Hyperparameters for the minibatch SGD driver.

    The learning rate is ``eta0 * decay**t`` with ``t`` counted within the
    current restart cycle by default (``decay_scope='restart'``); set
    ``decay_scope='global'`` to keep decaying across restarts.  ``b1``/``b2``
    of ``None`` means re-estimate both buffers from the current parameters
    once per restart (forward and backward rates respectively), using at most
    ``gap_steps`` observations after burn-in.
    """

    eta0: float = 0.05
    decay: float = 0.95
    steps_per_restart: int = 25
    restart_threshold: float = 0.02
    batch_size: int = 100
    b1: Optional[int] = None
    b2: Optional[int] = None
    epsilon: float = 1e-10
    seed: int = 0
    max_restarts: int = 40
    decay_scope: str = "restart"
    probe_window: int = 10_000
    gap_steps: int = 10_000
    gap_burn_in: int = 100
    no_overlap: bool = False

    def check(self):
        if self.eta0 <= 0 or not 0 < self.decay < 1:
            raise ValueError("need eta0 > 0 and decay in (0, 1)")
        if min(self.steps_per_restart, self.batch_size, self.max_restarts) < 1:
            raise ValueError("steps_per_restart, batch_size, max_restarts must be >= 1")
        if self.restart_threshold <= 0 or not 0 < self.epsilon < 1:
            raise ValueError("need restart_threshold > 0 and epsilon in (0, 1)")
        if self.decay_scope not in ("restart", "global"):
            raise ValueError("decay_scope must be 'restart' or 'global'")


@dataclass
class SgdResult:
    model: HmmModel
    theta: np.ndarray
    labels: list
    trace: list
    restarts: int
    stopped_by: str
    buffers: tuple
    counts: dict


def _derived_seed(seed, *key) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])


def sgd_infer(model0: HmmModel, obs, selector: ParamSelector, config: SgdConfig) -> SgdResult:
    """Normalized-gradient ascent on the buffered minibatch estimator.

    Each restart cycle re-resolves the buffer lengths (when automatic),
    probes the log-likelihood on a fixed window as a divergence guard, and
    takes ``steps_per_restart`` steps of ``theta += eta * g/|g|``.  The run
    stops when the parameter vector moves less than ``restart_threshold``
    (max-norm) between consecutive restart ends, or at ``max_restarts``.
    """
    config.check()
    obs = np.asarray(obs, dtype=float)
    n = obs.shape[0]
    k = model0.n_states
    if selector.size(k) == 0:
        raise ValueError("selector has no free parameters")

    theta = selector.pack(model0)
    model = selector.unpack(model0, theta)
    labels = selector.labels(k)
    counts = {"gradient": 0, "probe": 0, "gap": 0}
    trace: list[dict] = []
    probe_obs = obs[: min(config.probe_window, n)]
    best_probe = -np.inf
    prev_theta = None
    stopped_by = "max_restarts"
    restarts = config.max_restarts
    b1 = b2 = 0
    max_buffer = (n - 3) // 2

    for restart in range(config.max_restarts):
        if config.b1 is None or config.b2 is None:
            gap_obs = obs[: min(n, config.gap_burn_in + config.gap_steps)]
            fwd = lyapunov.estimate_gap(
                model, gap_obs, burn_in=config.gap_burn_in,
                seed=_derived_seed(config.seed, 1, restart), direction="forward",
            )
            bwd = lyapunov.estimate_gap(
                model, gap_obs, burn_in=config.gap_burn_in,
                seed=_derived_seed(config.seed, 2, restart), direction="backward",
            )
            # one filter matvec plus one Jacobian apply per step, both directions
            counts["gap"] += 4 * gap_obs.shape[0]
            b1 = min(lyapunov.buffer_length(fwd.gap, config.epsilon), max_buffer)
            b2 = min(lyapunov.buffer_length(bwd.gap, config.epsilon), max_buffer)
        else:
            b1 = min(config.b1, max_buffer)
            b2 = min(config.b2, max_buffer)
        if b1 + 1 > n - b2 - 1:
            raise ValueError("buffers leave no sampling domain; sequence too short")

        probe = forward_filter(model, probe_obs, store_history=False).log_likelihood
        counts["probe"] += probe_obs.shape[0]
        best_probe = max(best_probe, probe)
        if best_probe - probe > 1e3:
            raise InferenceDivergedError(
                f"probe log-likelihood fell by {best_probe - probe:.1f} nats at restart {restart}"
            )

        for step in range(config.steps_per_restart):
            t_global = restart * config.steps_per_restart + step
            t_decay = step if config.decay_scope == "restart" else t_global
            eta = config.eta0 * config.decay**t_decay
            report = minibatch_gradient(
                model, obs, selector, s=config.batch_size, b1=b1, b2=b2,
                seed=_derived_seed(config.seed, 0, restart, step),
                no_overlap=config.no_overlap,
            )
            counts["gradient"] += report.matvecs
            norm = float(np.linalg.norm(report.gradient))
            if norm > 0:
                theta = theta + eta * report.gradient / norm
                model = selector.unpack(model, theta)
            row = {"restart": restart, "step": t_global, "eta": eta,
                   "probe_loglik": probe if step == 0 else None}
            row.update(zip(labels, theta.tolist()))
            trace.append(row)

        if prev_theta is not None and np.abs(theta - prev_theta).max() < config.restart_threshold:
            stopped_by = "threshold"
            restarts = restart + 1
            break
        prev_theta = theta.copy()

    counts["total"] = sum(v for key, v in counts.items() if key != "total")
    return SgdResult(
        model=model, theta=theta, labels=labels, trace=trace,
        restarts=restarts, stopped_by=stopped_by, buffers=(b1, b2), counts=counts,
    )
