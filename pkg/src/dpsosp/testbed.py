"""Synthetic strict-saddle problems with analytically known constants.

Both families use linear component offsets, ``f_i(x) = f(x) + <b_i, x>`` with
``sum_i b_i = 0``, so the stochastic variance ``avg_i ||b_i||^2 = sigma^2`` is
exact and independent of ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .problem import OracleSet, Problem, ProblemSpec
from .rng import stream

GAP_MARGIN = 1.1


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form facts about a testbed problem.

    ``lambda_min`` and ``v1`` describe the Hessian at ``saddle``; ``f_star`` is
    the minimum over the clamp ball.
    """

    saddle: np.ndarray
    lambda_min: float
    v1: np.ndarray
    f_star: float
    minimizers: tuple
    start: np.ndarray

    def hessian(self, problem: "Problem", x: np.ndarray) -> np.ndarray:
        return problem.params["hessian"](x)


def make_offsets(sigma: float, n: int, dim: int, seed: int) -> np.ndarray:
    """Zero-sum offsets with ``avg ||b_i||^2 = sigma^2`` and ``max ||b_i|| <= sigma * sqrt(3)``.

    Directions are uniform on the sphere, so before recentering every norm
    equals ``sigma``; recentering and the final rescale move norms by
    ``O(1/sqrt(n))``.
    """
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    if sigma == 0:
        return np.broadcast_to(np.zeros(dim), (n, dim))
    if n < 2:
        raise InputError("need n >= 2 to recenter nonzero offsets")
    u = stream(seed, "offsets").standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u -= u.mean(axis=0)
    msq = float(np.mean(np.sum(u * u, axis=1)))
    if msq == 0.0:
        raise InputError("degenerate offsets; choose another seed")
    b = sigma * u / math.sqrt(msq)
    if np.max(np.linalg.norm(b, axis=1)) > sigma * math.sqrt(3.0):
        raise InputError("offset norm cap violated; use larger n")
    return b


def _mean_offset(b: np.ndarray) -> np.ndarray:
    return b.mean(axis=0)


@dataclass
class QuadraticSaddleProblem:
    hessian_eigs: np.ndarray
    noise_offsets: np.ndarray
    clamp_radius: float

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum(self.hessian_eigs * x * x, axis=-1)

    def gradient(self, x):
        return self.hessian_eigs * np.asarray(x, dtype=float)

    def component_gradient(self, i, x):
        return self.gradient(x) + self.noise_offsets[i]

    def component_gradients(self, idx, x):
        g = self.gradient(x)
        # np.take is much faster than fancy indexing for row gathers.
        return g[..., None, :] + np.take(self.noise_offsets, idx, axis=0)

    def hessian_vector(self, x, v):
        return self.hessian_eigs * np.asarray(v, dtype=float)

    def hessian(self, x):
        return np.diag(self.hessian_eigs)


@dataclass
class QuarticSaddleProblem:
    """``f(x) = x'Hx/2 + a ||x||^4 / 4`` with ``H = diag(-gamma, pos_eigs)``."""

    neg_eig: float
    pos_eigs: np.ndarray
    quartic_coeff: float
    noise_offsets: np.ndarray
    clamp_radius: float
    eigs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.eigs = np.concatenate([[-self.neg_eig], np.asarray(self.pos_eigs, dtype=float)])

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1)
        return 0.5 * np.sum(self.eigs * x * x, axis=-1) + 0.25 * self.quartic_coeff * sq * sq

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        sq = np.sum(x * x, axis=-1, keepdims=True)
        return self.eigs * x + self.quartic_coeff * sq * x

    def component_gradient(self, i, x):
        return self.gradient(x) + self.noise_offsets[i]

    def component_gradients(self, idx, x):
        g = self.gradient(x)
        # np.take is much faster than fancy indexing for row gathers.
        return g[..., None, :] + np.take(self.noise_offsets, idx, axis=0)

    def hessian_vector(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        sq = np.sum(x * x, axis=-1, keepdims=True)
        xv = np.sum(x * v, axis=-1, keepdims=True)
        return self.eigs * v + self.quartic_coeff * (sq * v + 2.0 * xv * x)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.diag(self.eigs) + self.quartic_coeff * (np.dot(x, x) * np.eye(x.size) + 2.0 * np.outer(x, x))


def _oracles(model, n: int) -> OracleSet:
    return OracleSet(
        full_gradient=model.gradient,
        component_gradient=model.component_gradient,
        objective=model.objective,
        hessian_vector=model.hessian_vector,
        n_components=n,
        component_gradients=model.component_gradients,
        vectorized=True,
    )


def make_quadratic(eigs, sigma: float, n: int, seed: int, clamp_radius: float = 1.0,
                   name: str = "quadratic"):
    """Quadratic ``f(x) = sum_j eigs_j x_j^2 / 2`` with linear component noise.

    Returns ``(spec, oracles, truth)``; ``f_gap`` covers any start in the clamp ball.
    """
    problem = quadratic_problem(eigs, sigma, n, seed, clamp_radius, name)
    return problem.spec, problem.oracles, problem.truth


def quadratic_problem(eigs, sigma: float, n: int, seed: int, clamp_radius: float = 1.0,
                      name: str = "quadratic") -> Problem:
    eigs = np.asarray(eigs, dtype=float)
    if eigs.ndim != 1 or eigs.size == 0 or not np.all(np.isfinite(eigs)):
        raise InputError("eigs must be a nonempty finite vector")
    if n < 1 or clamp_radius <= 0:
        raise InputError("n must be >= 1 and clamp_radius positive")
    d = eigs.size
    offsets = make_offsets(sigma, n, d, seed)
    model = QuadraticSaddleProblem(eigs, offsets, float(clamp_radius))
    r2 = clamp_radius ** 2
    lam_min = float(eigs.min())
    j = int(np.argmin(eigs))
    v1 = np.zeros(d)
    v1[j] = 1.0
    f_star = 0.5 * min(lam_min, 0.0) * r2
    f_sup = 0.5 * max(float(eigs.max()), 0.0) * r2
    if lam_min < 0:
        minimizers = (clamp_radius * v1, -clamp_radius * v1)
    else:
        minimizers = (np.zeros(d),)
    truth = GroundTruth(np.zeros(d), lam_min, v1, f_star, minimizers, np.zeros(d))
    spec = ProblemSpec(
        dim=d,
        n_components=n,
        lipschitz_grad=float(np.max(np.abs(eigs))),
        lipschitz_hess=0.0,
        stoch_sigma=float(sigma),
        # max(., tiny) keeps f_gap positive for the zero problem.
        f_gap=max(GAP_MARGIN * (f_sup - f_star), 1e-12),
    )
    params = {"family": "quadratic", "eigs": eigs, "sigma": sigma, "seed": seed,
              "hessian": model.hessian, "model": model}
    return Problem(name, spec, _oracles(model, n), float(clamp_radius), truth, params)


def make_quartic(gamma: float, pos_eigs, a: float, sigma: float, n: int, seed: int,
                 clamp_radius: Optional[float] = None, name: str = "quartic"):
    """Quartic strict saddle; returns ``(spec, oracles, truth)``."""
    problem = quartic_problem(gamma, pos_eigs, a, sigma, n, seed, clamp_radius, name)
    return problem.spec, problem.oracles, problem.truth


def quartic_problem(gamma: float, pos_eigs, a: float, sigma: float, n: int, seed: int,
                    clamp_radius: Optional[float] = None, name: str = "quartic") -> Problem:
    """Quartic strict saddle at the origin.

    Minima sit at ``+-sqrt(gamma / a) e_1`` with ``f* = -gamma^2 / (4a)``.  On the
    ball of radius ``R`` (default ``3 sqrt(gamma / a)``) the certified constants
    are ``L = max|lambda| + 3aR^2`` and ``rho = 6a(R + 1)``.  The registered start
    is the saddle, and ``f_gap`` is 10% above ``f(0) - f*``.
    """
    if gamma <= 0 or a <= 0:
        raise InputError("gamma and a must be positive")
    pos = np.atleast_1d(np.asarray(pos_eigs, dtype=float))
    if np.any(pos <= 0):
        raise InputError("pos_eigs must be positive")
    if n < 1:
        raise InputError("n must be >= 1")
    radius = 3.0 * math.sqrt(gamma / a) if clamp_radius is None else float(clamp_radius)
    if radius < math.sqrt(gamma / a):
        raise InputError("clamp_radius must contain the minimizers at sqrt(gamma / a)")
    d = 1 + pos.size
    offsets = make_offsets(sigma, n, d, seed)
    model = QuarticSaddleProblem(float(gamma), pos, float(a), offsets, radius)
    v1 = np.zeros(d)
    v1[0] = 1.0
    t_star = math.sqrt(gamma / a)
    f_star = -gamma ** 2 / (4.0 * a)
    eig_max = float(np.max(np.abs(model.eigs)))
    spec = ProblemSpec(
        dim=d,
        n_components=n,
        lipschitz_grad=eig_max + 3.0 * a * radius ** 2,
        lipschitz_hess=6.0 * a * (radius + 1.0),
        stoch_sigma=float(sigma),
        f_gap=GAP_MARGIN * (0.0 - f_star),
    )
    truth = GroundTruth(np.zeros(d), -float(gamma), v1, f_star, (t_star * v1, -t_star * v1), np.zeros(d))
    params = {"family": "quartic", "gamma": gamma, "pos_eigs": pos, "a": a, "sigma": sigma,
              "seed": seed, "hessian": model.hessian, "model": model}
    return Problem(name, spec, _oracles(model, n), radius, truth, params)


# Named problem instances.  Sizes are chosen so that every experiment in the
# acceptance suite runs in seconds to minutes on one core.
PRESETS = {
    "quad-2d-saddle": {"family": "quadratic", "eigs": (1.0, -1.0), "sigma": 0.0, "n": 10_000,
                       "seed": 0, "clamp_radius": 1.0},
    "quad-10d": {"family": "quadratic", "eigs": tuple(np.linspace(0.5, 3.0, 10)), "sigma": 0.5,
                 "n": 10_000, "seed": 0, "clamp_radius": 1.0},
    "quartic-2d": {"family": "quartic", "gamma": 1.0, "pos_eigs": (1.0,), "a": 0.01, "sigma": 0.0,
                   "n": 1_000_000, "seed": 0, "clamp_radius": None},
    "quartic-10d": {"family": "quartic", "gamma": 0.05, "pos_eigs": tuple(np.linspace(0.05, 0.1, 9)),
                    "a": 0.05, "sigma": 0.005, "n": 10_000, "seed": 0, "clamp_radius": None},
}


def preset_params(name: str, **overrides) -> dict:
    if name not in PRESETS:
        raise InputError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}")
    params = dict(PRESETS[name])
    unknown = set(overrides) - (set(params) - {"family"})
    if unknown:
        raise InputError(f"preset {name!r} has no parameter(s) {sorted(unknown)}")
    params.update(overrides)
    return params


def make_preset(name: str, **overrides) -> Problem:
    """Build a preset problem, e.g. ``make_preset("quartic-10d", n=2000)``."""
    p = preset_params(name, **overrides)
    if p["family"] == "quadratic":
        return quadratic_problem(p["eigs"], p["sigma"], int(p["n"]), int(p["seed"]), p["clamp_radius"], name)
    return quartic_problem(p["gamma"], p["pos_eigs"], p["a"], p["sigma"], int(p["n"]), int(p["seed"]),
                           p["clamp_radius"], name)
