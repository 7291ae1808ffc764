"""Finite-sum problems: regularity constants, oracles, and oracle checks.

Oracles are pure functions of ``(index, point)``.  The testbed oracles also
accept stacked points of shape ``(R, d)`` (and index arrays of shape
``(R, B)``), which lets the optimizer advance many independent runs in
lockstep; user oracles only need the single-point form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InputError, OracleError

FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class ProblemSpec:
    """Regularity constants of ``f = avg_i f_i`` on its certified region."""

    dim: int
    n_components: int
    lipschitz_grad: float
    lipschitz_hess: float
    stoch_sigma: float
    f_gap: float

    def __post_init__(self):
        if self.dim < 1 or self.n_components < 1:
            raise InputError("dim and n_components must be >= 1")
        for name in ("lipschitz_grad", "lipschitz_hess", "stoch_sigma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InputError(f"{name} must be finite and nonnegative, got {value}")
        if not math.isfinite(self.f_gap) or self.f_gap <= 0:
            raise InputError(f"f_gap must be finite and positive, got {self.f_gap}")


@dataclass(frozen=True)
class OracleSet:
    full_gradient: Callable[[np.ndarray], np.ndarray]
    component_gradient: Callable[[int, np.ndarray], np.ndarray]
    objective: Callable[[np.ndarray], float]
    hessian_vector: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_components: int
    # Optional vectorized form: (indices of shape (..., B), x of shape (..., d)) -> (..., B, d).
    component_gradients: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    # True when the oracles broadcast over a leading batch axis of points.
    vectorized: bool = False

    def gradients_at(self, indices: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Per-component gradients ``[grad f_i(x) for i in indices]`` as a (B, d) array."""
        if self.component_gradients is not None:
            return np.asarray(self.component_gradients(indices, x), dtype=float)
        return np.stack([np.asarray(self.component_gradient(int(i), x), dtype=float) for i in indices])


@dataclass
class Problem:
    """A problem instance: constants, oracles, and optional known ground truth.

    ``clamp_radius`` is the ball (around the origin) on which the constants in
    ``spec`` are certified; ``None`` means they are global.
    """

    name: str
    spec: ProblemSpec
    oracles: OracleSet
    clamp_radius: Optional[float] = None
    truth: Optional[object] = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def identical_components(self) -> bool:
        # sigma = 0 bounds the component spread by zero: every f_i has the same gradient.
        return self.spec.stoch_sigma == 0.0

    def in_ball(self, x: np.ndarray) -> np.ndarray | bool:
        if self.clamp_radius is None:
            return True
        return np.linalg.norm(x, axis=-1) <= self.clamp_radius


def pairwise_mean(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean along ``axis`` using numpy's pairwise summation.

    numpy only sums pairwise along the contiguous axis, so the reduced axis is
    moved last first.
    """
    moved = np.ascontiguousarray(np.moveaxis(a, axis, -1))
    return moved.mean(axis=-1)


def _check_batch(batch, n: int) -> np.ndarray:
    idx = np.asarray(batch)
    if idx.ndim != 1 or idx.size == 0:
        raise InputError("batch must be a nonempty 1-d index set")
    if not np.issubdtype(idx.dtype, np.integer):
        raise InputError("batch indices must be integers")
    if idx.min() < 0 or idx.max() >= n:
        raise InputError(f"batch index out of range [0, {n})")
    return idx


def minibatch_gradient(oracles: OracleSet, batch, x: np.ndarray) -> np.ndarray:
    """Average of ``grad f_i(x)`` over the indices in ``batch``."""
    idx = _check_batch(batch, oracles.n_components)
    grads = oracles.gradients_at(idx, np.asarray(x, dtype=float))
    return pairwise_mean(grads, axis=0)


def _finite(value, what: str, probe) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise OracleError(f"{what} returned a non-finite value", probe=np.array(probe))
    return arr


def fd_gradient(objective, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate step ``h * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += step
        dn[j] -= step
        g[j] = (float(objective(up)) - float(objective(dn))) / (up[j] - dn[j])
    return g


def fd_hessian_vector(gradient, x: np.ndarray, v: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    step = h * max(1.0, float(np.linalg.norm(x)))
    return (np.asarray(gradient(x + step * v)) - np.asarray(gradient(x - step * v))) / (2 * step)


@dataclass
class OracleReport:
    """Largest violation observed by each consistency check."""

    full_vs_average: float
    fd_gradient: float
    fd_hessian_vector: float
    smoothness: float
    hessian_lipschitz: float
    tol: float

    def violations(self) -> dict:
        return {
            "full_vs_average": self.full_vs_average,
            "fd_gradient": self.fd_gradient,
            "fd_hessian_vector": self.fd_hessian_vector,
            "smoothness": self.smoothness,
            "hessian_lipschitz": self.hessian_lipschitz,
        }

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.violations().values())


def verify_oracle_consistency(oracles: OracleSet, spec: ProblemSpec, probes, tol: float,
                              seed: int = 0) -> OracleReport:
    """Cross-check the oracles against each other and against the stated constants.

    Smoothness violations are the positive part of
    ``||grad f(x) - grad f(y)|| - L ||x - y||`` over all probe pairs, and the
    Hessian-Lipschitz analogue uses ``||(H(x) - H(y)) u||`` for a random unit
    ``u`` per pair.
    """
    points = [np.asarray(p, dtype=float) for p in probes]
    if not points:
        raise InputError("probes must be nonempty")
    rng = np.random.default_rng(seed)
    every = np.arange(oracles.n_components)

    full_avg = fd_g = fd_hv = 0.0
    grads, directions = [], []
    for x in points:
        g = _finite(oracles.full_gradient(x), "full_gradient", x)
        _finite(oracles.objective(x), "objective", x)
        avg = minibatch_gradient(oracles, every, x)
        full_avg = max(full_avg, float(np.linalg.norm(g - avg)))
        fd_g = max(fd_g, float(np.linalg.norm(g - fd_gradient(oracles.objective, x))))
        u = rng.standard_normal(x.size)
        u /= np.linalg.norm(u)
        hv = _finite(oracles.hessian_vector(x, u), "hessian_vector", x)
        fd_hv = max(fd_hv, float(np.linalg.norm(hv - fd_hessian_vector(oracles.full_gradient, x, u))))
        grads.append(g)
        directions.append(u)

    smooth = hess_lip = 0.0
    for a, b in itertools.combinations(range(len(points)), 2):
        dist = float(np.linalg.norm(points[a] - points[b]))
        gap = float(np.linalg.norm(grads[a] - grads[b]))
        smooth = max(smooth, gap - spec.lipschitz_grad * dist)
        u = directions[a]
        dh = np.asarray(oracles.hessian_vector(points[a], u)) - np.asarray(oracles.hessian_vector(points[b], u))
        hess_lip = max(hess_lip, float(np.linalg.norm(dh)) - spec.lipschitz_hess * dist)

    return OracleReport(full_avg, fd_g, fd_hv, max(smooth, 0.0), max(hess_lip, 0.0), tol)
