"""Noise calibration for clipping-free DP-SGD.

The step size, horizon, gradient bound and Gaussian scale depend on each
other in a loop: a longer run needs more noise, more noise needs a smaller
step, and a smaller step needs a longer run.  :func:`resolve_plan` breaks the
loop numerically for a concrete ``(epsilon, delta, B)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import BudgetError, InputError, ResolutionError
from .problem import ProblemSpec

MAX_ROUNDS = 200
ALPHA_RTOL = 1e-6
INFLATION = 1.5
# Noise is set this far above the requirement so the DP inequality holds strictly.
OVERSHOOT = 1e-6
# Horizons beyond this are treated as "no fixed point".
MAX_ITERATIONS = 10 ** 15


@dataclass(frozen=True)
class Constants:
    """Absolute constants left unspecified by the theory.

    ``c`` multiplies the logarithmic part of the gradient bound; ``c1``/``c2``
    are the clipped-SGD privacy constants; the rest scale the step size and
    the escape schedule.
    """

    c: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c_eta: float = 1.0
    c_drop: float = 1.0
    c_iters: float = 4.0
    c_radius: float = 4.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise InputError(f"constant {f.name} must be finite and nonnegative")
        if self.c2 <= 0 or self.c_eta <= 0 or self.c1 <= 0:
            raise InputError("c1, c2 and c_eta must be positive")

    def schedule_ok(self) -> bool:
        """Escape-schedule constraints: enough buckets drop, and moving far implies a drop."""
        if self.c_iters <= 0:
            return False
        return (64.0 * self.c_drop / (10.0 * self.c_iters) > 1.0
                and self.c_radius ** 2 >= 2.0 * self.c_drop * self.c * self.c_iters)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **kw) -> "Constants":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(kw) - known
        if unknown:
            raise InputError(f"unknown constant(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **{k: float(v) for k, v in kw.items()})


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    batch_size: int

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InputError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InputError(f"batch_size must be a positive integer, got {self.batch_size}")


@dataclass(frozen=True)
class NoisePlan:
    """Resolved run parameters.

    ``privacy_delta`` is the delta of the final guarantee; with
    ``halve_delta=False`` the noise is calibrated at the user's delta and the
    guarantee is ``2 * delta``, with ``halve_delta=True`` it is calibrated at
    ``delta / 2`` so the guarantee is the user's delta.
    """

    grad_bound: float
    gauss_std: float
    step_size: float
    iterations: int
    alpha: float
    total_noise_var: float
    escape_iters: Optional[int]
    escape_radius: Optional[float]
    escape_drop: Optional[float]
    constants: Constants = field(default_factory=Constants)
    epsilon: float = 1.0
    delta: float = 0.01
    batch_size: int = 1
    n_components: int = 1
    calibration_delta: float = 0.01
    privacy_delta: float = 0.02
    halve_delta: bool = False
    no_nsg: bool = False
    rounds: int = 0

    def replace(self, **kw) -> "NoisePlan":
        return dataclasses.replace(self, **kw)

    def flat(self) -> dict:
        """Flat ``key -> value`` view; constants are prefixed ``constants.``."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "constants":
                for k, v in value.as_dict().items():
                    out[f"constants.{k}"] = v
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_flat(cls, items: dict) -> "NoisePlan":
        consts = {}
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in items.items():
            if key.startswith("constants."):
                consts[key.split(".", 1)[1]] = float(raw)
                continue
            if key not in types:
                raise InputError(f"unknown plan field {key!r}")
            kw[key] = _coerce(key, raw)
        kw["constants"] = Constants().with_overrides(**consts)
        return cls(**kw)


_INT_FIELDS = {"iterations", "escape_iters", "batch_size", "n_components", "rounds"}
_BOOL_FIELDS = {"halve_delta", "no_nsg"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    if raw in ("None", ""):
        return None
    if key in _BOOL_FIELDS:
        if raw not in ("True", "False"):
            raise InputError(f"{key} must be True or False")
        return raw == "True"
    if key in _INT_FIELDS:
        return int(raw)
    return float(raw)


def gradient_bound(spec: ProblemSpec, T: int, delta: float, c: float = 1.0) -> float:
    """High-probability bound on every component gradient norm along a run.

    ``C = 2 sqrt(L f_max) + c (L sqrt(log(T/delta)) + sigma sqrt(log(nT)) + sqrt(sigma log(1/delta)))``
    """
    if T < 1:
        raise InputError("T must be >= 1")
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    L, sigma = spec.lipschitz_grad, spec.stoch_sigma
    tail = (L * math.sqrt(math.log(T / delta))
            + sigma * math.sqrt(math.log(spec.n_components * T))
            + math.sqrt(sigma * math.log(1.0 / delta)))
    return 2.0 * math.sqrt(L * spec.f_gap) + c * tail


def gaussian_scale(C: float, T: int, delta: float, n: int, epsilon: float, c2: float = 1.0) -> float:
    """Smallest admissible per-coordinate noise std for clipped DP-SGD at bound ``C``."""
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    if T < 1 or n < 1 or epsilon <= 0 or c2 <= 0 or C < 0:
        raise InputError("gaussian_scale needs C >= 0 and positive T, n, epsilon, c2")
    return c2 * C * math.sqrt(T * math.log(1.0 / delta)) / (n * epsilon)


def laplace_scales(C: float, L: float, n: int, epsilon: float) -> tuple[float, float]:
    """Laplace scales for the private gradient-norm and eigenvalue queries."""
    if n < 1 or epsilon <= 0 or C < 0 or L < 0:
        raise InputError("laplace_scales needs nonnegative C, L and positive n, epsilon")
    return C / (n * epsilon), L / (n * epsilon)


def nsg_floor(sigma: float, B: int, d: int, tilde_delta: float) -> float:
    """Noise std that makes the injected noise dominate heavy-tailed gradient noise."""
    if not 0 < tilde_delta <= 1:
        raise InputError("tilde_delta must lie in (0, 1]")
    return math.sqrt(sigma ** 2 / (d * B * tilde_delta))


def alpha_start(spec: ProblemSpec, budget: PrivacyBudget) -> float:
    """Theory's accuracy scale ``f_max d^(1/4) / sqrt(n epsilon)``."""
    return spec.f_gap * spec.dim ** 0.25 / math.sqrt(spec.n_components * budget.epsilon)


def _noise_var(spec: ProblemSpec, B: int, gauss: float) -> float:
    return spec.dim * gauss ** 2 + spec.stoch_sigma ** 2 / B


def step_and_horizon(spec: ProblemSpec, B: int, consts: Constants, alpha: float,
                     gauss: float) -> tuple[float, int]:
    """Step size and iteration count for accuracy ``alpha`` at noise std ``gauss``.

    Step: ``c_eta * min(alpha^2 / (L (1 + s2)), f_max / (L s2))`` with
    ``s2 = d gauss^2 + sigma^2 / B``, then capped so that
    ``eta <= min(1/L, 1/(sigma sqrt(T)))``.  For ``L = 0`` the smoothness factor
    is taken as 1.
    """
    L, sigma, fmax = spec.lipschitz_grad, spec.stoch_sigma, spec.f_gap
    s2 = _noise_var(spec, B, gauss)
    l_eff = L if L > 0 else 1.0
    eta = alpha ** 2 / (l_eff * (1.0 + s2))
    if s2 > 0:
        eta = min(eta, fmax / (l_eff * s2))
    eta *= consts.c_eta
    if L > 0:
        eta = min(eta, 1.0 / L)
    span = 64.0 * fmax / alpha ** 2
    if sigma > 0:
        eta = min(eta, 1.0 / (span * sigma ** 2))
    if not span / eta <= MAX_ITERATIONS:
        raise OverflowError("iteration count exceeds MAX_ITERATIONS")
    T = math.ceil(span / eta)
    for _ in range(8):
        if sigma == 0 or eta * sigma * math.sqrt(T) <= 1.0:
            break
        eta = 1.0 / (sigma * math.sqrt(T))
        T = math.ceil(span / eta)
    return eta, T


@dataclass
class _Solution:
    alpha: float
    gauss: float
    eta: float
    T: int
    C: float
    required: float


def _solve_noise(spec, budget, consts, alpha, cal_delta, floor, max_inner=MAX_ROUNDS):
    """Monotone fixed-point iteration on the noise std for a fixed ``alpha``.

    Returns ``None`` when no self-consistent noise level is reached.
    """
    gauss = floor
    B, n, eps = budget.batch_size, spec.n_components, budget.epsilon
    for _ in range(max_inner):
        try:
            eta, T = step_and_horizon(spec, B, consts, alpha, gauss)
        except OverflowError:
            return None
        C = gradient_bound(spec, T, cal_delta, consts.c)
        req = gaussian_scale(C, T, cal_delta, n, eps, consts.c2)
        if gauss > req or req == 0.0:
            return _Solution(alpha, gauss, eta, T, C, req)
        gauss = max(req * (1.0 + OVERSHOOT), floor)
        if not math.isfinite(gauss):
            return None
    return None


def resolve_plan(spec: ProblemSpec, budget: PrivacyBudget, constants: Constants | None = None, *,
                 halve_delta: bool = False, no_nsg: bool = False, tilde_delta: float = 0.01,
                 max_rounds: int = MAX_ROUNDS) -> NoisePlan:
    """Find a concrete ``(alpha, C, Delta, eta, T)`` meeting privacy and convergence constraints.

    Starting from the theory's accuracy scale, ``alpha`` is inflated by 1.5x
    until the noise fixed point exists, the feasibility boundary is then
    bisected (geometrically, to 1e-6 relative), and the plan is placed one
    inflation factor above the boundary.  A start that is already feasible is
    kept as is.  The noise std is the running max of the DP requirement,
    ``sigma / sqrt(B)`` and, with ``no_nsg``, the heavy-tail floor.
    """
    consts = constants or Constants()
    cal_delta = budget.delta / 2.0 if halve_delta else budget.delta
    B = budget.batch_size
    if B > spec.n_components:
        raise InputError("batch_size exceeds n_components")
    floor = spec.stoch_sigma / math.sqrt(B)
    if no_nsg:
        floor = max(floor, nsg_floor(spec.stoch_sigma, B, spec.dim, tilde_delta))

    def solve(alpha):
        return _solve_noise(spec, budget, consts, alpha, cal_delta, floor)

    rounds = 0
    alpha = alpha_start(spec, budget)
    sol = solve(alpha)
    while sol is None:
        rounds += 1
        if rounds >= max_rounds:
            raise ResolutionError("alpha inflation did not reach a feasible plan",
                                  {"alpha": alpha, "rounds": rounds})
        alpha *= INFLATION
        sol = solve(alpha)

    if rounds > 0:
        lo, hi = alpha / INFLATION, alpha
        while hi / lo - 1.0 > ALPHA_RTOL:
            rounds += 1
            if rounds >= max_rounds:
                raise ResolutionError("boundary search did not converge", {"alpha": hi, "lo": lo, "rounds": rounds})
            mid = math.sqrt(lo * hi)
            if solve(mid) is None:
                lo = mid
            else:
                hi = mid
        sol = solve(hi * INFLATION)
        if sol is None:
            raise ResolutionError("plan above the feasibility boundary is infeasible", {"alpha": hi * INFLATION})

    plan = _build_plan(spec, budget, consts, sol, cal_delta, halve_delta, no_nsg, rounds)
    problems = verify_plan(plan, spec, tilde_delta=tilde_delta)
    if problems.get("budget"):
        raise BudgetError(
            f"epsilon={budget.epsilon} is not below c1*T*B^2/n^2="
            f"{consts.c1 * plan.iterations * B ** 2 / spec.n_components ** 2:.6g}")
    bad = [k for k, v in problems.items() if v]
    if bad:
        raise ResolutionError(f"resolved plan violates: {', '.join(bad)}", plan.flat())
    return plan


def _build_plan(spec, budget, consts, sol, cal_delta, halve_delta, no_nsg, rounds) -> NoisePlan:
    rho = spec.lipschitz_hess
    alpha, eta = sol.alpha, sol.eta
    if rho > 0:
        escape_iters = math.ceil(consts.c_iters / (eta * math.sqrt(rho * alpha)))
        escape_radius = consts.c_radius * math.sqrt(alpha / rho)
        escape_drop = consts.c_drop * math.sqrt(alpha ** 3 / rho)
    else:
        escape_iters = escape_radius = escape_drop = None
    return NoisePlan(
        grad_bound=sol.C,
        gauss_std=sol.gauss,
        step_size=eta,
        iterations=sol.T,
        alpha=alpha,
        total_noise_var=_noise_var(spec, budget.batch_size, sol.gauss),
        escape_iters=escape_iters,
        escape_radius=escape_radius,
        escape_drop=escape_drop,
        constants=consts,
        epsilon=budget.epsilon,
        delta=budget.delta,
        batch_size=budget.batch_size,
        n_components=spec.n_components,
        calibration_delta=cal_delta,
        privacy_delta=2.0 * cal_delta,
        halve_delta=halve_delta,
        no_nsg=no_nsg,
        rounds=rounds,
    )


def verify_plan(plan: NoisePlan, spec: ProblemSpec, tilde_delta: float = 0.01) -> dict:
    """Recheck every plan invariant from scratch; maps invariant name -> violated?"""
    L, sigma, fmax = spec.lipschitz_grad, spec.stoch_sigma, spec.f_gap
    consts = plan.constants
    B, n, T, eta = plan.batch_size, spec.n_components, plan.iterations, plan.step_size
    slack = 1e-12
    cap = math.inf if L == 0 else 1.0 / L
    if sigma > 0:
        cap = min(cap, 1.0 / (sigma * math.sqrt(T)))
    C = gradient_bound(spec, T, plan.calibration_delta, consts.c)
    req = gaussian_scale(C, T, plan.calibration_delta, n, plan.epsilon, consts.c2)
    floor = sigma / math.sqrt(B)
    if plan.no_nsg:
        floor = max(floor, nsg_floor(sigma, B, spec.dim, tilde_delta))
    checks = {
        "step_cap": eta > cap * (1 + slack),
        "noise_floor": plan.gauss_std < floor * (1 - slack),
        "dp_noise": not (plan.gauss_std > req or req == 0.0),
        "grad_bound": abs(plan.grad_bound - C) > 1e-12 * max(1.0, C),
        "iterations": T != math.ceil(64.0 * fmax / (eta * plan.alpha ** 2)),
        "noise_var": abs(plan.total_noise_var - _noise_var(spec, B, plan.gauss_std)) > 1e-12 * max(1.0, plan.total_noise_var),
        "schedule": not consts.schedule_ok(),
        "budget": not plan.epsilon < consts.c1 * T * B ** 2 / n ** 2,
    }
    rho = spec.lipschitz_hess
    if rho > 0:
        checks["escape"] = (
            plan.escape_iters != math.ceil(consts.c_iters / (eta * math.sqrt(rho * plan.alpha)))
            or not math.isclose(plan.escape_radius, consts.c_radius * math.sqrt(plan.alpha / rho), rel_tol=1e-12)
            or not math.isclose(plan.escape_drop, consts.c_drop * math.sqrt(plan.alpha ** 3 / rho), rel_tol=1e-12)
        )
    else:
        checks["escape"] = plan.escape_iters is not None
    return checks
