"""Empirical diagnostics for the convergence theory.

Coupled runs, saddle-escape statistics, and audits of the descent and
bucket arguments.  Constants that the theory leaves unspecified are fitted
from data and reported, never asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, PreconditionError
from .optimizer import RunTrace, run_many
from .privacy import NoisePlan
from .problem import Problem
from .rng import derive_seed, stream
from .sosp import EigParams, check_sosp_many, min_eigenpair, min_eigs_at

TILDE_DELTA = 0.01
MAX_AUDIT_POINTS = 500
TIGHT = EigParams(iters=100_000, tol=1e-14)


def alpha_t(eta_gamma: float, t) -> np.ndarray:
    """``sqrt(sum_{tau < t} (1 + eta*gamma)^(2 tau))``, the coupling growth factor."""
    t = np.asarray(t, dtype=float)
    q = (1.0 + eta_gamma) ** 2
    if eta_gamma == 0:
        return np.sqrt(t)
    # expm1/log1p keep precision when eta*gamma is tiny.
    return np.sqrt(np.expm1(t * math.log(q)) / math.expm1(math.log(q)))


def beta_t(eta_gamma: float, t) -> np.ndarray:
    if eta_gamma <= 0:
        raise InputError("eta*gamma must be positive")
    return (1.0 + eta_gamma) ** np.asarray(t, dtype=float) / math.sqrt(eta_gamma)


def coupling_std(plan: NoisePlan, gamma: float, t) -> np.ndarray:
    """Predicted std of ``<x_t - x'_t, v1>`` on a quadratic with curvature ``-gamma`` along v1."""
    return 2.0 * plan.step_size * plan.gauss_std * alpha_t(plan.step_size * gamma, t)


def _saddle_direction(problem: Problem, x0: np.ndarray, seed: int) -> tuple[float, np.ndarray]:
    lam, v, _ = min_eigenpair(lambda u: problem.oracles.hessian_vector(x0, u), problem.dim,
                              problem.spec.lipschitz_grad, TIGHT.iters, TIGHT.tol, stream(seed, "coupling-v1"))
    return lam, v / np.linalg.norm(v)


def escape_horizon(plan: NoisePlan, gamma: Optional[float] = None) -> int:
    """Escape-episode length: the plan's value, or ``ceil(c_I / (eta * gamma))`` when it has none."""
    if plan.escape_iters is not None:
        return int(plan.escape_iters)
    if gamma is None or gamma <= 0:
        raise PreconditionError("no escape horizon: plan has none and no negative curvature given")
    return int(math.ceil(plan.constants.c_iters / (plan.step_size * gamma)))


@dataclass
class CoupledPair:
    trace_a: RunTrace
    trace_b: RunTrace
    v1: np.ndarray
    diff_along_v1: np.ndarray
    lambda_min: float = math.nan


def run_coupled_many(problem: Problem, x0, plan: NoisePlan, seeds: Sequence[int], *,
                     steps: Optional[int] = None, reflect_first: bool = False) -> list[CoupledPair]:
    """Coupled pairs for each seed; the second trace gets the mirrored noise.

    ``reflect_first`` swaps the roles, which must give the same joint law.
    """
    x0 = np.asarray(x0, dtype=float)
    lam, v1 = _saddle_direction(problem, x0, seed=0)
    if lam >= 0:
        raise PreconditionError(f"Hessian at x0 has no negative curvature (lambda_min={lam:.3g})")
    T = escape_horizon(plan, -lam) if steps is None else int(steps)
    seeds = [int(s) for s in seeds]
    k = len(seeds)
    flags = [reflect_first] * k + [not reflect_first] * k
    traces = run_many(problem, x0, plan, "no-clip", seeds + seeds, steps=T, reflect=flags, direction=v1)
    pairs = []
    for a, b in zip(traces[:k], traces[k:]):
        diff = (a.points - b.points) @ v1
        pairs.append(CoupledPair(a, b, v1, diff, lam))
    return pairs


def run_coupled(problem: Problem, x0, plan: NoisePlan, seed: int, steps: Optional[int] = None) -> CoupledPair:
    """Two runs sharing all randomness except the Gaussian component along ``v1``."""
    return run_coupled_many(problem, x0, plan, [seed], steps=steps)[0]


@dataclass
class EscapeSummary:
    frac_drop: float  # f(x_0) - f(x_I) > F
    frac_increase: float  # f(x_0) - f(x_I) < -F/100
    frac_displaced: float  # max_t ||x_t - x_0|| >= R
    trials: int
    steps: int
    drops: np.ndarray = field(repr=False)


def escape_statistics(problem: Problem, saddle, plan: NoisePlan, trials: int, seed: int = 0,
                      chunk: int = 500) -> EscapeSummary:
    """Monte-Carlo escape episodes of ``escape_iters`` steps started at ``saddle``."""
    if trials < 100:
        raise InputError("escape statistics need at least 100 trials")
    if plan.escape_iters is None:
        raise PreconditionError("plan has no escape schedule (rho = 0)")
    saddle = np.asarray(saddle, dtype=float)
    lam = min_eigs_at(problem, saddle[None, :], EigParams(method="dense") if "hessian" in problem.params else TIGHT)[0][0]
    threshold = -math.sqrt(problem.spec.lipschitz_hess * plan.alpha)
    if lam > threshold:
        raise PreconditionError(f"lambda_min={lam:.4g} at the start is above -sqrt(rho*alpha)={threshold:.4g}")
    seeds = [derive_seed(seed, "escape", i) for i in range(trials)]
    drops, disp = [], []
    for lo in range(0, trials, chunk):
        for tr in run_many(problem, saddle, plan, "no-clip", seeds[lo:lo + chunk],
                           steps=plan.escape_iters, keep_points=False):
            drops.append(tr.objective[0] - tr.objective[-1])
            disp.append(tr.max_displacement[-1])
    drops = np.asarray(drops)
    disp = np.asarray(disp)
    F, R = plan.escape_drop, plan.escape_radius
    return EscapeSummary(float(np.mean(drops > F)), float(np.mean(drops < -F / 100.0)),
                         float(np.mean(disp >= R)), trials, int(plan.escape_iters), drops)


@dataclass
class DescentAudit:
    """Fitted constants for the descent and improve-or-localize inequalities.

    ``c_descent`` is the smallest ``c`` with
    ``drop >= (eta/8) sum ||grad||^2 - c * N(t)`` on every audited window and
    ``c_localize`` the smallest with ``||x_{t0+t} - x_t0||^2 <= c eta t (drop + N(t))``,
    where ``N(t) = eta * sigma_tilde^2 * (eta L t + log(1/tilde_delta))``.
    """

    c_descent: float
    c_localize: float
    worst_descent: tuple
    worst_localize: tuple
    windows: int


def _windows(T: int, starts: int = 32):
    t0s = np.unique(np.linspace(0, max(T - 1, 0), min(starts, max(T, 1))).astype(int))
    lengths = []
    t = 1
    while t <= T:
        lengths.append(t)
        t *= 2
    for t0 in t0s:
        for t in lengths:
            if t0 + t <= T:
                yield int(t0), int(t)


def descent_audit(trace: RunTrace, problem: Problem, tilde_delta: float = TILDE_DELTA) -> DescentAudit:
    plan = trace.plan
    T = trace.iterations
    eta, s2, L = plan.step_size, plan.total_noise_var, problem.spec.lipschitz_grad
    sq = np.concatenate([[0.0], np.cumsum(trace.grad_norm[:T] ** 2)])
    f = trace.objective
    c_d = c_l = 0.0
    worst_d = worst_l = (0, 0)
    count = 0
    for t0, t in _windows(T):
        count += 1
        drop = f[t0] - f[t0 + t]
        noise = eta * s2 * (eta * L * t + math.log(1.0 / tilde_delta))
        short = eta / 8.0 * (sq[t0 + t] - sq[t0]) - drop
        need = _ratio(short, noise)
        if need > c_d:
            c_d, worst_d = need, (t0, t)
        if trace.points is not None:
            move = float(np.sum((trace.points[t0 + t] - trace.points[t0]) ** 2))
            need = _ratio(move, eta * t * (drop + noise))
            if need > c_l:
                c_l, worst_l = need, (t0, t)
    if trace.points is None:
        c_l = math.nan
    return DescentAudit(c_d, c_l, worst_d, worst_l, count)


def _ratio(excess: float, scale: float) -> float:
    """Smallest c >= 0 with ``excess <= c * scale``."""
    if excess <= 0:
        return 0.0
    if scale <= 0:
        return math.inf
    return excess / scale


@dataclass
class BucketStats:
    bucket_size: int
    per_bucket_drop: np.ndarray
    saddle_buckets: np.ndarray


@dataclass
class BucketAudit:
    large_grad_count: int
    saddle_count: int  # estimated from the subsample, scaled to all T iterates
    sampled: int
    sampled_saddles: int
    buckets: BucketStats


def audit_points(T: int, max_points: int = MAX_AUDIT_POINTS) -> np.ndarray:
    """Evenly spaced iterate indices in ``[0, T)``."""
    if T <= 0:
        return np.zeros(0, dtype=int)
    return np.unique(np.linspace(0, T - 1, min(T, max_points)).round().astype(int))


def bucket_audit(trace: RunTrace, problem: Problem, plan: Optional[NoisePlan] = None,
                 max_points: int = MAX_AUDIT_POINTS, eig_params: EigParams = EigParams(method="dense"),
                 bucket_size: Optional[int] = None) -> BucketAudit:
    """Count large-gradient and saddle iterates and per-bucket objective drops.

    Without an escape schedule (``rho = 0``) the bucket size defaults to
    ``ceil(c_I / (eta L))``.
    """
    plan = trace.plan if plan is None else plan
    T = trace.iterations
    if bucket_size is None:
        bucket_size = plan.escape_iters or int(math.ceil(plan.constants.c_iters / (plan.step_size * max(problem.spec.lipschitz_grad, 1e-300))))
    if T < bucket_size:
        raise PreconditionError(f"trace has {T} steps, fewer than one bucket of {bucket_size}")
    if trace.points is None:
        raise InputError("bucket audit needs a trace with coordinates")
    alpha, rho = plan.alpha, problem.spec.lipschitz_hess
    large = int(np.sum(trace.grad_norm[:T] >= alpha))
    idx = audit_points(T, max_points)
    if rho > 0:
        lam, _ = min_eigs_at(problem, trace.points[idx], eig_params)
        saddle = lam < -math.sqrt(rho * alpha)
    else:
        saddle = np.zeros(idx.size, dtype=bool)
    k = T // bucket_size
    starts = np.arange(k + 1) * bucket_size
    drops = trace.objective[starts[:-1]] - trace.objective[starts[1:]]
    in_bucket = idx[saddle] // bucket_size
    saddle_buckets = np.unique(in_bucket[in_bucket < k])
    est = int(round(saddle.sum() * T / idx.size))
    return BucketAudit(large, est, int(idx.size), int(saddle.sum()),
                       BucketStats(int(bucket_size), drops, saddle_buckets))


def sosp_fraction(trace: RunTrace, problem: Problem, alpha: Optional[float] = None,
                  max_points: int = MAX_AUDIT_POINTS,
                  eig_params: EigParams = EigParams(method="dense")) -> tuple[float, np.ndarray]:
    """Fraction of subsampled iterates that are exact alpha-SOSPs, with their indices."""
    if trace.points is None:
        raise InputError("need a trace with coordinates")
    alpha = trace.plan.alpha if alpha is None else alpha
    idx = audit_points(trace.iterations, max_points)
    reports = check_sosp_many(trace.points[idx], problem, alpha, problem.spec.lipschitz_hess, eig_params)
    ok = np.array([r.is_sosp_exact for r in reports])
    return float(ok.mean()), idx
