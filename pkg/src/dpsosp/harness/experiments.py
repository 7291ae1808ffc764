"""Experiment drivers: epsilon sweeps and the clipped/unclipped comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..errors import DpsospError, InputError
from ..optimizer import RunTrace, default_start, run_many
from ..privacy import NoisePlan, resolve_plan
from ..problem import Problem
from .config import ExperimentConfig

SWEEP_EPSILONS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)


def resolve(config: ExperimentConfig, problem: Optional[Problem] = None) -> NoisePlan:
    problem = config.problem() if problem is None else problem
    return resolve_plan(problem.spec, config.budget, config.constants,
                        halve_delta=config.halve_delta, no_nsg=config.no_nsg)


def start_points(problem: Problem, seeds: Sequence[int], start: str, escape_default: bool) -> np.ndarray:
    """One start per seed: the perturbed saddle or a random point of the clamp ball."""
    if start == "auto":
        escape = escape_default
    else:
        escape = start == "saddle"
    return np.stack([default_start(problem, s, escape=escape) for s in seeds])


def run_config(config: ExperimentConfig, plan: Optional[NoisePlan] = None, *, keep_points: bool = True,
               escape_default: bool = False, **kw) -> list[RunTrace]:
    """Run every seed of ``config``; provenance is stored in each trace's ``meta``."""
    problem = config.problem()
    plan = resolve(config, problem) if plan is None else plan
    x0 = start_points(problem, config.seeds, config.start, escape_default)
    traces = run_many(problem, x0, plan, config.mode, config.seeds, steps=config.steps,
                      keep_points=keep_points, **kw)
    meta = {"problem": config.preset}
    meta.update({f"problem.{k}": _fmt(v) for k, v in config.overrides.items()})
    for tr in traces:
        tr.meta.update(meta)
    return traces


def _fmt(value) -> str:
    if isinstance(value, (tuple, list, np.ndarray)):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


@dataclass
class SweepRow:
    epsilon: Optional[float]  # None for the non-private baseline
    alpha: float = math.nan
    iterations: int = 0
    gauss_std: float = math.nan
    mean_gap: float = math.nan
    min_gap: float = math.nan
    max_gap: float = math.nan
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class SweepTable:
    rows: list
    baseline: SweepRow
    seeds: list = field(default_factory=list)

    def spearman(self) -> float:
        """Rank correlation between epsilon and mean gap over the rows that ran."""
        good = [r for r in self.rows if r.ok]
        if len(good) < 2:
            return math.nan
        return float(stats.spearmanr([r.epsilon for r in good], [r.mean_gap for r in good])[0])

    def baseline_ratio(self) -> float:
        """Largest-epsilon mean gap over the baseline mean gap."""
        good = [r for r in self.rows if r.ok]
        if not good or not self.baseline.ok:
            return math.nan
        return good[-1].mean_gap / self.baseline.mean_gap

    def as_rows(self) -> list[dict]:
        out = []
        for r in self.rows + [self.baseline]:
            out.append({"epsilon": "baseline" if r.epsilon is None else r.epsilon, "alpha": r.alpha,
                        "iterations": r.iterations, "gauss_std": r.gauss_std, "mean_gap": r.mean_gap,
                        "min_gap": r.min_gap, "max_gap": r.max_gap, "error": r.error})
        return out


def _gap_row(eps, plan: NoisePlan, traces, f_star) -> SweepRow:
    gaps = np.array([tr.objective[-1] - f_star for tr in traces])
    return SweepRow(eps, plan.alpha, plan.iterations, plan.gauss_std, float(gaps.mean()),
                    float(gaps.min()), float(gaps.max()))


def sweep_epsilon(config: ExperimentConfig, eps_values: Sequence[float] = SWEEP_EPSILONS) -> SweepTable:
    """Final objective gap ``f(x_T) - f*`` per epsilon, plus a non-private baseline.

    A row whose plan cannot be resolved or whose runs diverge records the
    error and the sweep continues.  The baseline reuses the step size and
    horizon of the largest epsilon that resolved, with the injected noise
    switched off.
    """
    eps_values = [float(e) for e in eps_values]
    if not eps_values or any(e <= 0 for e in eps_values):
        raise InputError("eps_values must be nonempty and positive")
    if any(b <= a for a, b in zip(eps_values, eps_values[1:])):
        raise InputError("eps_values must be sorted ascending without repeats")
    problem = config.problem()
    if problem.truth is None:
        raise InputError("sweep needs a problem with a known minimum")
    f_star = problem.truth.f_star
    x0 = start_points(problem, config.seeds, config.start, escape_default=False)
    rows, last_plan = [], None
    for eps in eps_values:
        try:
            plan = resolve(config.with_budget(epsilon=eps), problem)
            traces = run_many(problem, x0, plan, config.mode, config.seeds, steps=config.steps,
                              keep_points=False)
        except DpsospError as exc:
            rows.append(SweepRow(eps, error=f"{exc.category}: {exc}"))
            continue
        rows.append(_gap_row(eps, plan, traces, f_star))
        last_plan = plan
    if last_plan is None:
        baseline = SweepRow(None, error="no epsilon resolved")
    else:
        try:
            traces = run_many(problem, x0, last_plan, config.mode, config.seeds, steps=config.steps,
                              keep_points=False, gauss_std=0.0)
            baseline = _gap_row(None, last_plan, traces, f_star)
            baseline.gauss_std = 0.0
        except DpsospError as exc:
            baseline = SweepRow(None, error=f"{exc.category}: {exc}")
    return SweepTable(rows, baseline, list(config.seeds))


@dataclass
class ClipComparison:
    seeds: list
    identical: int  # runs whose clipped and unclipped traces coincide
    clipped_runs: int  # runs with at least one clip event
    max_sample_grad: float  # largest per-sample gradient norm seen
    grad_bound: float


def clip_equivalence(problem: Problem, plan: NoisePlan, seeds: Sequence[int], x0=None) -> ClipComparison:
    """Run each seed with and without clipping on shared randomness and compare."""
    seeds = list(seeds)
    if x0 is None:
        x0 = start_points(problem, seeds, "random", escape_default=False)
    clipped = run_many(problem, x0, plan, "clip", seeds, keep_points=False)
    plain = run_many(problem, x0, plan, "no-clip", seeds, keep_points=False)
    same = sum(a.same_path(b) and np.array_equal(a.objective, b.objective) for a, b in zip(clipped, plain))
    fired = sum(int(tr.clip_events.sum() > 0) for tr in clipped)
    peak = max(float(tr.max_sample_grad.max(initial=0.0)) for tr in clipped + plain)
    return ClipComparison(seeds, int(same), int(fired), peak, plan.grad_bound)
