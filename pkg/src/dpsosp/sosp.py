"""Second-order stationarity: exact checks, the eigensolver, and private selection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, OracleError
from .privacy import NoisePlan
from .problem import Problem

# Consecutive small Rayleigh-quotient changes required before stopping.
PATIENCE = 3


@dataclass(frozen=True)
class EigParams:
    """Settings for the smallest-eigenvalue computation.

    ``method="power"`` uses the shifted power method through Hessian-vector
    products; ``"dense"`` diagonalizes the explicit Hessian (testbed problems
    only) and serves as the exact oracle.
    """

    iters: int = 5000
    tol: float = 1e-10
    seed: int = 0
    method: str = "power"


@dataclass
class SospReport:
    grad_norm: float
    min_eig: float
    noisy_grad_norm: Optional[float]
    noisy_min_eig: Optional[float]
    is_sosp_exact: bool
    is_sosp_private: Optional[bool]
    power_iters_used: int


def _power_block(apply_shifted: Callable, V: np.ndarray, iters: int, tol: float):
    """Power iteration on a stack of start vectors; returns (rayleigh, vectors, iters)."""
    P = V.shape[0]
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    rq = np.full(P, np.nan)
    streak = np.zeros(P, dtype=int)
    used = np.zeros(P, dtype=int)
    active = np.ones(P, dtype=bool)
    for k in range(1, iters + 1):
        idx = np.flatnonzero(active)
        W = apply_shifted(idx, V[idx])
        if not np.all(np.isfinite(W)):
            raise OracleError("hessian_vector returned a non-finite value")
        new = np.einsum("pd,pd->p", V[idx], W)
        norms = np.linalg.norm(W, axis=1)
        old = rq[idx]
        rq[idx] = new
        used[idx] = k
        change = np.abs(new - old)
        small = (change == 0) | (change < tol * np.maximum(np.abs(new), np.finfo(float).tiny))
        streak[idx] = np.where(small, streak[idx] + 1, 0)
        # A zero image means the shifted operator vanishes on V: the quotient is exact.
        moving = norms > 0
        V[idx[moving]] = W[moving] / norms[moving, None]
        done = (streak[idx] >= PATIENCE) | ~moving
        active[idx[done]] = False
        if not active.any():
            break
    return rq, V, used


def min_eigenpair(hvp: Callable, d: int, L: float, iters: int, tol: float,
                  rng: np.random.Generator) -> tuple[float, np.ndarray, int]:
    """Smallest eigenvalue of the operator ``hvp`` with its eigenvector.

    Runs the power method on ``v -> L v - H v``, whose top eigenvalue is
    ``L - lambda_min`` when ``L`` bounds the spectral radius.
    """
    if iters < 1:
        raise InputError("iters must be >= 1")
    if L < 0 or not math.isfinite(L):
        raise InputError("L must be finite and nonnegative")
    v0 = rng.standard_normal((1, d))

    def shifted(_, V):
        return L * V - np.asarray(hvp(V[0]), dtype=float)[None, :]

    rq, V, used = _power_block(shifted, v0, iters, tol)
    return float(L - rq[0]), V[0].copy(), int(used[0])


def min_eigenvalue(hvp: Callable, d: int, L: float, iters: int, tol: float,
                   rng: np.random.Generator) -> tuple[float, int]:
    """Estimate ``lambda_min`` of a symmetric operator; returns ``(estimate, iterations)``."""
    value, _, used = min_eigenpair(hvp, d, L, iters, tol, rng)
    return value, used


def dense_min_eig(problem: Problem, x: np.ndarray) -> tuple[float, np.ndarray]:
    hess = problem.params.get("hessian")
    if hess is None:
        raise InputError(f"problem {problem.name!r} has no explicit Hessian")
    w, U = np.linalg.eigh(np.asarray(hess(np.asarray(x, dtype=float))))
    return float(w[0]), U[:, 0]


def min_eigs_at(problem: Problem, points: np.ndarray, params: EigParams = EigParams()) -> tuple[np.ndarray, np.ndarray]:
    """Smallest Hessian eigenvalue at each row of ``points``; returns ``(values, iterations)``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if params.method == "dense":
        return np.array([dense_min_eig(problem, x)[0] for x in X]), np.zeros(len(X), dtype=int)
    if params.method != "power":
        raise InputError(f"unknown eigen method {params.method!r}")
    L = problem.spec.lipschitz_grad
    hvp = problem.oracles.hessian_vector
    rng = np.random.default_rng(params.seed)
    V0 = rng.standard_normal(X.shape)
    if problem.oracles.vectorized:
        def shifted(idx, V):
            return L * V - np.asarray(hvp(X[idx], V), dtype=float)
    else:
        def shifted(idx, V):
            return L * V - np.stack([np.asarray(hvp(X[i], v), dtype=float) for i, v in zip(idx, V)])
    rq, _, used = _power_block(shifted, V0, params.iters, params.tol)
    return L - rq, used


def _passes(grad_norm, min_eig, alpha, rho):
    # Strict inequalities: a tie at either threshold is not stationary.
    ok = grad_norm < alpha
    if rho > 0:
        ok = ok & (min_eig > -math.sqrt(rho * alpha))
    return ok


def check_sosp(x, problem: Problem, alpha: float, rho: Optional[float] = None,
               eig_params: EigParams = EigParams()) -> SospReport:
    """Exact alpha-SOSP test at ``x``.  ``rho = 0`` reduces to the first-order test."""
    if alpha <= 0:
        raise InputError("alpha must be positive")
    rho = problem.spec.lipschitz_hess if rho is None else rho
    reports = check_sosp_many(np.atleast_2d(x), problem, alpha, rho, eig_params)
    return reports[0]


def check_sosp_many(points, problem: Problem, alpha: float, rho: float,
                    eig_params: EigParams = EigParams()) -> list[SospReport]:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    oracles = problem.oracles
    if oracles.vectorized:
        G = np.asarray(oracles.full_gradient(X), dtype=float)
    else:
        G = np.stack([np.asarray(oracles.full_gradient(x), dtype=float) for x in X])
    if not np.all(np.isfinite(G)):
        raise OracleError("full_gradient returned a non-finite value")
    gnorm = np.linalg.norm(G, axis=1)
    if rho > 0:
        eigs, used = min_eigs_at(problem, X, eig_params)
    else:
        eigs, used = np.full(len(X), np.nan), np.zeros(len(X), dtype=int)
    exact = _passes(gnorm, eigs, alpha, rho)
    return [SospReport(float(gnorm[i]), float(eigs[i]), None, None, bool(exact[i]), None, int(used[i]))
            for i in range(len(X))]


def laplace_draw(scale: float, rng: np.random.Generator, size=None):
    """Laplace(0, scale) sample(s); zero scale gives exact zeros."""
    if scale < 0:
        raise InputError("scale must be nonnegative")
    if scale == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.laplace(0.0, scale, size)


def selection_warning(plan: NoisePlan, f_gap: float, dim: int) -> Optional[str]:
    """Warn when ``n < 1 / (epsilon * f_gap^2 * sqrt(d))`` (all hidden constants set to 1)."""
    need = 1.0 / (plan.epsilon * f_gap ** 2 * math.sqrt(dim))
    if plan.n_components < need:
        return f"n={plan.n_components} is below {need:.3g}; private selection accuracy is not guaranteed"
    return None


def private_select(candidates: Sequence, problem: Problem, plan: NoisePlan,
                   scales: tuple[float, float], rng: np.random.Generator,
                   eig_params: EigParams = EigParams(),
                   exact: Optional[list[SospReport]] = None) -> tuple[Optional[int], list[SospReport]]:
    """AboveThreshold scan for the first candidate that looks stationary.

    Each candidate's gradient norm and smallest eigenvalue get fresh Laplace
    noise with ``scales = (gradient scale, eigenvalue scale)``, and are compared
    with ``alpha / 2`` and ``-sqrt(rho * alpha) / 2``.  The scan stops at the
    first pass; the returned reports cover every candidate examined.
    ``exact`` may supply precomputed exact reports for the candidates.
    """
    if len(candidates) == 0:
        raise InputError("candidates must be nonempty")
    msg = selection_warning(plan, problem.spec.f_gap, problem.dim)
    if msg:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    alpha, rho = plan.alpha, problem.spec.lipschitz_hess
    grad_scale, eig_scale = scales
    if exact is None:
        exact = check_sosp_many(np.asarray(candidates, dtype=float), problem, alpha, rho, eig_params)
    thr_g = alpha / 2.0
    thr_e = -math.sqrt(rho * alpha) / 2.0
    seen = []
    for i, base in enumerate(exact):
        ng = base.grad_norm + laplace_draw(grad_scale, rng)
        ne = base.min_eig + laplace_draw(eig_scale, rng) if rho > 0 else math.nan
        ok = ng < thr_g and (rho == 0 or ne > thr_e)
        seen.append(SospReport(base.grad_norm, base.min_eig, float(ng), float(ne), base.is_sosp_exact,
                               bool(ok), base.power_iters_used))
        if ok:
            return i, seen
    return None, seen
