"""Gaussian-emission HMM parameters and their structural checks.

The parameter set is a row-stochastic transition matrix, one Gaussian
(mean, std) per state, and an initial state distribution.  Everything
downstream (filtering, gap estimation, gradient inference) consumes the
``HmmModel`` container defined here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ModelError

# Row sums / distribution sums must match 1 this tightly; inputs inside the
# tolerance are renormalized on load, anything worse is rejected.
STOCHASTIC_TOL = 1e-12

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HmmModel:
    """Transition matrix, per-state Gaussian emissions, initial distribution.

    The dataclass constructor performs no validation so tests can build
    deliberately broken or degenerate models; use :func:`load_model`,
    :meth:`from_dict` or :func:`validate` at trust boundaries.
    """

    transition: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    initial: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def from_dict(cls, data: dict) -> "HmmModel":
        """Build and validate a model from the JSON-file schema.

        Expected keys: ``transition`` (K lists of K floats), ``means``,
        ``stds`` (K floats each) and optionally ``initial`` (defaults to
        uniform).  Row sums within ``STOCHASTIC_TOL`` of 1 are renormalized;
        anything else raises :class:`ModelError`.
        """
        try:
            transition = np.asarray(data["transition"], dtype=float)
            means = np.asarray(data["means"], dtype=float)
            stds = np.asarray(data["stds"], dtype=float)
        except KeyError as exc:
            raise ModelError(f"missing model field {exc}") from exc
        if "initial" in data and data["initial"] is not None:
            initial = np.asarray(data["initial"], dtype=float)
        else:
            k = transition.shape[0] if transition.ndim == 2 else 0
            initial = np.full(k, 1.0 / k) if k else np.array([])
        model = cls(transition, means, stds, initial)
        model = _renormalize(model)
        violations = validate(model)
        if violations:
            raise ModelError(violations)
        return model

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "initial": self.initial.tolist(),
        }


def _renormalize(model: HmmModel) -> HmmModel:
    """Divide rows / initial by their sums where they are within tolerance."""
    transition = np.array(model.transition, dtype=float)
    initial = np.array(model.initial, dtype=float)
    if transition.ndim == 2 and transition.shape[0] == transition.shape[1]:
        sums = transition.sum(axis=1)
        ok = np.abs(sums - 1.0) <= STOCHASTIC_TOL
        transition[ok] = transition[ok] / sums[ok, None]
    if initial.ndim == 1 and initial.size:
        s = initial.sum()
        if abs(s - 1.0) <= STOCHASTIC_TOL and s > 0:
            initial = initial / s
    return replace(model, transition=transition, initial=initial)


def load_model(path) -> HmmModel:
    """Read a model JSON file, validate it, and return the model."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return HmmModel.from_dict(data)


def save_model(model: HmmModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def validate(model: HmmModel) -> list[str]:
    """Return all violated invariants; an empty list means the model is
    usable by every module, including the forgetting-rate machinery."""
    violations: list[str] = []
    t = np.asarray(model.transition)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] == 0:
        violations.append("transition must be a nonempty square matrix")
        return violations
    k = t.shape[0]
    if not np.all(np.isfinite(t)):
        violations.append("transition has non-finite entries")
        return violations
    for i in range(k):
        if np.any(t[i] < 0) or abs(t[i].sum() - 1.0) > STOCHASTIC_TOL:
            violations.append(f"row {i} not stochastic")

    means = np.asarray(model.means)
    stds = np.asarray(model.stds)
    if means.shape != (k,):
        violations.append(f"means must have length {k}")
    elif not np.all(np.isfinite(means)):
        violations.append("means has non-finite entries")
    if stds.shape != (k,):
        violations.append(f"stds must have length {k}")
    elif not np.all(np.isfinite(stds)) or np.any(stds <= 0):
        violations.append("stds must be strictly positive")

    initial = np.asarray(model.initial)
    if initial.shape != (k,):
        violations.append(f"initial must have length {k}")
    elif (
        not np.all(np.isfinite(initial))
        or np.any(initial < 0)
        or abs(initial.sum() - 1.0) > STOCHASTIC_TOL
    ):
        violations.append("initial not a probability distribution")

    if not violations and not is_primitive(t):
        violations.append("transition not primitive")
    return violations


def is_primitive(transition: np.ndarray) -> bool:
    """True iff some power of the matrix is entrywise positive.

    Uses the Wielandt exponent K^2 - 2K + 2: a nonnegative K x K matrix is
    primitive iff that power has no zero entry.  The check runs on the 0/1
    zero pattern (re-thresholded after every multiply), so float underflow
    can never fake a zero.
    """
    t = np.asarray(transition)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("transition must be a square matrix")
    k = t.shape[0]
    pattern = (t > 0).astype(float)
    power = pattern
    for _ in range(k * k - 2 * k + 1):
        power = ((power @ pattern) > 0).astype(float)
    return bool(np.all(power > 0))


def stationary_distribution(
    transition: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Left fixed vector pi with pi @ M = pi, by power iteration.

    Primitive input converges geometrically; hitting the iteration cap means
    a non-primitive matrix slipped through and raises ``NumericalError``.
    """
    from .errors import NumericalError

    t = np.asarray(transition, dtype=float)
    k = t.shape[0]
    pi = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = pi @ t
        nxt = nxt / nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NumericalError(
        "stationary distribution did not converge; transition may not be primitive"
    )


def log_emission_densities(model: HmmModel, y: float) -> np.ndarray:
    """Vector of log N(y; mu_j, sigma_j) over all states j."""
    z = (y - model.means) / model.stds
    return -0.5 * z * z - np.log(model.stds) - 0.5 * _LOG_2PI


def log_density_fn(model: HmmModel):
    """Closure evaluating log emission densities with precomputed constants;
    use inside per-step loops over long sequences."""
    means = np.asarray(model.means, dtype=float)
    inv = 1.0 / np.asarray(model.stds, dtype=float)
    const = np.log(inv) - 0.5 * _LOG_2PI

    def log_dens(y):
        z = (y - means) * inv
        return -0.5 * z * z + const

    return log_dens


def emission_density(model: HmmModel, state: int, y: float) -> float:
    """Gaussian emission density for one state; strictly positive for finite y."""
    mu = model.means[state]
    sigma = model.stds[state]
    z = (y - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def emission_matrix(model: HmmModel, y: float) -> np.ndarray:
    """Diagonal matrix of per-state emission densities at y."""
    return np.diag(np.exp(log_emission_densities(model, y)))


def marginal_density(model: HmmModel, y: float) -> float:
    """Stationary observation density sum_j pi_j N(y; mu_j, sigma_j)."""
    pi = stationary_distribution(model.transition)
    return float(pi @ np.exp(log_emission_densities(model, y)))
