"""Independent reference implementations used only to check the package.

Everything here deliberately avoids the production code paths: the forward
likelihood is recomputed by log-domain dynamic programming, unnormalized
vectors by high-precision mpmath products, small joints by exhaustive path
enumeration, primitivity by graph reachability, and derivatives by central
finite differences.
"""

import itertools
import math

import mpmath as mp
import networkx as nx
import numpy as np
from scipy.special import logsumexp


def log_forward_loglik(model, obs) -> float:
    """Log marginal likelihood by log-domain DP (no per-step normalization)."""
    with np.errstate(divide="ignore"):
        log_m = np.log(model.transition)
        lp = np.log(np.asarray(model.initial, dtype=float))
    for y in obs:
        z = (y - model.means) / model.stds
        log_d = -0.5 * z * z - np.log(model.stds) - 0.5 * math.log(2 * math.pi)
        lp = logsumexp(lp[:, None] + log_m, axis=0) + log_d
    return float(logsumexp(lp))


def _mp_dens(y, mu, sigma):
    z = (mp.mpf(float(y)) - mp.mpf(float(mu))) / mp.mpf(float(sigma))
    return mp.exp(-z * z / 2) / (mp.mpf(float(sigma)) * mp.sqrt(2 * mp.pi))


def mp_forward_unnormalized(model, obs, dps: int = 60):
    """Exact (high-precision) row vector p_0 M D_1 ... M D_n, no rescaling."""
    with mp.workdps(dps):
        k = model.n_states
        m_rows = [[mp.mpf(float(v)) for v in row] for row in model.transition]
        p = [mp.mpf(float(v)) for v in model.initial]
        for y in obs:
            dens = [_mp_dens(y, model.means[j], model.stds[j]) for j in range(k)]
            p = [sum(p[i] * m_rows[i][j] for i in range(k)) * dens[j] for j in range(k)]
        return p


def mp_backward_unnormalized(model, obs, i: int, dps: int = 60):
    """Exact column vector b_i = M D_{i+1} ... M D_n 1 (i one-based)."""
    with mp.workdps(dps):
        k = model.n_states
        m_rows = [[mp.mpf(float(v)) for v in row] for row in model.transition]
        b = [mp.mpf(1)] * k
        for t in range(len(obs) - 1, i - 1, -1):
            dens = [_mp_dens(obs[t], model.means[j], model.stds[j]) for j in range(k)]
            b = [sum(m_rows[r][j] * dens[j] * b[j] for j in range(k)) for r in range(k)]
        return b


def mp_normalize(vec):
    total = sum(vec)
    return np.array([float(v / total) for v in vec])


def enum_path_likelihood(model, obs) -> float:
    """p(y_1..y_n) by summing over every latent path x_0..x_n."""
    k = model.n_states
    n = len(obs)
    total = 0.0
    for path in itertools.product(range(k), repeat=n + 1):
        prob = model.initial[path[0]]
        for t in range(n):
            prob *= model.transition[path[t], path[t + 1]]
            mu, sd = model.means[path[t + 1]], model.stds[path[t + 1]]
            prob *= math.exp(-0.5 * ((obs[t] - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        total += prob
    return total


def enum_smoothed(model, obs, i: int) -> np.ndarray:
    """p(x_i | y_1..y_n) by path enumeration (i one-based)."""
    k = model.n_states
    n = len(obs)
    post = np.zeros(k)
    for path in itertools.product(range(k), repeat=n + 1):
        prob = model.initial[path[0]]
        for t in range(n):
            prob *= model.transition[path[t], path[t + 1]]
            mu, sd = model.means[path[t + 1]], model.stds[path[t + 1]]
            prob *= math.exp(-0.5 * ((obs[t] - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        post[path[i]] += prob
    return post / post.sum()


def central_diff(f, x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def nx_is_primitive(pattern) -> bool:
    """Primitivity by strong connectivity plus aperiodicity of the digraph."""
    pattern = np.asarray(pattern)
    g = nx.DiGraph()
    k = pattern.shape[0]
    g.add_nodes_from(range(k))
    for i in range(k):
        for j in range(k):
            if pattern[i, j] > 0:
                g.add_edge(i, j)
    if not nx.is_strongly_connected(g):
        return False
    return nx.is_aperiodic(g)


def eig_stationary(transition) -> np.ndarray:
    """Left Perron vector by dense eigendecomposition."""
    vals, vecs = np.linalg.eig(np.asarray(transition, dtype=float).T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, idx])
    v = np.abs(v)
    return v / v.sum()
