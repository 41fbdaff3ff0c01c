"""Seeded generation of latent-state / observation sequences.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64); the
draw order is fixed (state uniforms first, then observation normals), so a
given (model, n, seed) always reproduces the same output bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import HmmModel


@dataclass(frozen=True)
class SampleOutput:
    """One simulated trajectory: emitting states x_1..x_n and y_1..y_n."""

    states: np.ndarray
    observations: np.ndarray
    seed: int


def sample_sequence(model: HmmModel, n: int, seed: int) -> SampleOutput:
    """Draw x_0 from the initial distribution, walk the chain n steps, and
    emit one Gaussian observation per visited state.

    The returned states are x_1..x_n (the emitting states); x_0 is drawn but
    not emitted, matching a filter that starts from the initial distribution
    before the first observation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = model.n_states
    rng = np.random.default_rng(seed)
    u = rng.random(n + 1)
    z = rng.standard_normal(n)

    cum_rows = np.cumsum(model.transition, axis=1)
    cum_init = np.cumsum(model.initial)
    states = np.empty(n, dtype=np.int64)
    x = min(int(np.searchsorted(cum_init, u[0], side="right")), k - 1)
    for t in range(n):
        x = min(int(np.searchsorted(cum_rows[x], u[t + 1], side="right")), k - 1)
        states[t] = x
    observations = model.means[states] + model.stds[states] * z
    return SampleOutput(states=states, observations=observations, seed=seed)


def write_observations(path, values, binary: bool = False) -> None:
    """Write observations as newline-delimited decimals or raw little-endian
    float64 bytes."""
    values = np.asarray(values, dtype=float)
    if binary:
        with open(path, "wb") as fh:
            fh.write(values.astype("<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for v in values:
                fh.write(repr(float(v)) + "\n")


def read_observations(path, binary: bool = False) -> np.ndarray:
    if binary:
        with open(path, "rb") as fh:
            return np.frombuffer(fh.read(), dtype="<f8").astype(float)
    return np.loadtxt(path, dtype=float, ndmin=1)


def iter_observations(path, binary: bool = False):
    """Yield observations one at a time without loading the whole file."""
    if binary:
        with open(path, "rb") as fh:
            while True:
                chunk = fh.read(8 * 4096)
                if not chunk:
                    return
                yield from np.frombuffer(chunk, dtype="<f8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield float(line)


def write_states(path, states) -> None:
    """States go to a parallel newline-delimited integer file."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in np.asarray(states, dtype=np.int64):
            fh.write(f"{int(s)}\n")
