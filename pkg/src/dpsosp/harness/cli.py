"""Command-line entry point (``dpsosp``).

Failures print one line ``error: <category>: <message>`` to stderr and exit
with status 2; the category is one of the ``DpsospError`` categories, or
``io`` for file-system errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path


from ..analysis import bucket_audit, descent_audit, escape_statistics, audit_points
from ..errors import DpsospError, InputError
from ..privacy import NoisePlan, PrivacyBudget, laplace_scales
from ..rng import stream
from ..sosp import EigParams, check_sosp_many, private_select
from ..testbed import make_preset
from .config import _PROBLEM_TYPES, ExperimentConfig, load_config
from .experiments import SWEEP_EPSILONS, resolve, run_config, sweep_epsilon
from .traceio import read_trace, write_trace


def _parse_pairs(text: str) -> dict:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise InputError(f"expected k=v, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        if args.epsilon is None:
            raise InputError("--preset needs --epsilon (or use --config)")
        cfg = ExperimentConfig(args.preset, {}, PrivacyBudget(args.epsilon, args.delta, args.batch_size))
    else:
        raise InputError("give --config or --preset")
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.outputs = args.out
    if args.constants:
        cfg.constants = cfg.constants.with_overrides(**{k: float(v) for k, v in _parse_pairs(args.constants).items()})
    return cfg


def _emit(rows: list[dict], args, name: str) -> None:
    if not rows:
        return
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        path = Path(args.out) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue(), encoding="utf-8")
        print(path)
    else:
        sys.stdout.write(buf.getvalue())


def _problem_from_trace(trace):
    name = trace.meta.get("problem")
    if not name:
        raise InputError("trace does not record its problem preset")
    overrides = {}
    for key, value in trace.meta.items():
        if key.startswith("problem."):
            k = key.split(".", 1)[1]
            overrides[k] = _PROBLEM_TYPES[k](value)
    return make_preset(name, **overrides)


def cmd_calibrate(args) -> None:
    cfg = _config(args)
    plan = resolve(cfg)
    lines = [f"{k}={v}" for k, v in plan.flat().items()]
    text = "\n".join(lines) + "\n\n" + _structured(plan)
    if args.out:
        path = Path(args.out) / "plan.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    print(text, end="")


def _structured(plan: NoisePlan) -> str:
    groups = {
        "privacy": ["epsilon", "delta", "calibration_delta", "privacy_delta", "halve_delta", "n_components",
                    "batch_size"],
        "noise": ["grad_bound", "gauss_std", "total_noise_var", "no_nsg"],
        "schedule": ["alpha", "step_size", "iterations", "rounds"],
        "escape": ["escape_iters", "escape_radius", "escape_drop"],
    }
    out = []
    for title, keys in groups.items():
        out.append(f"{title}:")
        out.extend(f"  {k}: {getattr(plan, k)}" for k in keys)
    out.append("constants:")
    out.extend(f"  {k}: {v}" for k, v in plan.constants.as_dict().items())
    return "\n".join(out) + "\n"


def _read_plan_file(path) -> dict:
    items = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            break  # the structured block of a calibrate dump follows the flat listing
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def cmd_run(args) -> None:
    cfg = _config(args)
    if args.mode:
        cfg.mode = args.mode
    if args.steps is not None:
        cfg.steps = args.steps
    plan = resolve(cfg)
    if args.plan:
        flat = plan.flat()
        flat.update(_read_plan_file(args.plan))
        plan = NoisePlan.from_flat({k: str(v) for k, v in flat.items()})
    traces = run_config(cfg, plan)
    out = Path(cfg.outputs)
    for tr in traces:
        path = write_trace(tr, out / f"trace_seed{tr.seed}.csv", coords=False if args.no_coords else None)
        print(f"{path} T={tr.iterations} f_final={float(tr.objective[-1])!r} clips={int(tr.clip_events.sum())} "
              f"exited_ball={tr.exited_ball}")


def cmd_check_sosp(args) -> None:
    trace = read_trace(args.trace)
    if trace.points is None:
        raise InputError("trace has no coordinates")
    problem = _problem_from_trace(trace)
    plan = trace.plan
    alpha = plan.alpha if args.alpha is None else args.alpha
    if args.alpha is not None:
        plan = plan.replace(alpha=alpha)
    idx = audit_points(trace.iterations + 1, args.max_points)
    X = trace.points[idx]
    eig = EigParams(method=args.eig_method)
    exact = check_sosp_many(X, problem, alpha, problem.spec.lipschitz_hess, eig)
    selected = None
    reports = exact
    if args.private:
        scales = laplace_scales(plan.grad_bound, problem.spec.lipschitz_grad, plan.n_components, plan.epsilon)
        selected, seen = private_select(X, problem, plan, scales, stream(args.seed or 0, "select"), eig, exact)
        reports = seen
    rows = []
    for i, rep in zip(idx, reports):
        rows.append({"t": int(i), "grad_norm": rep.grad_norm, "min_eig": rep.min_eig,
                     "noisy_grad_norm": "" if rep.noisy_grad_norm is None else rep.noisy_grad_norm,
                     "noisy_min_eig": "" if rep.noisy_min_eig is None else rep.noisy_min_eig,
                     "is_sosp_exact": rep.is_sosp_exact,
                     "is_sosp_private": "" if rep.is_sosp_private is None else rep.is_sosp_private,
                     "power_iters_used": rep.power_iters_used})
    _emit(rows, args, "sosp.csv")
    if args.private:
        print(f"selected={'none' if selected is None else int(idx[selected])}", file=sys.stderr)


def cmd_escape(args) -> None:
    cfg = _config(args)
    problem = cfg.problem()
    plan = resolve(cfg, problem)
    saddle = problem.truth.saddle
    summary = escape_statistics(problem, saddle, plan, args.trials, seed=cfg.seeds[0])
    rows = [{"trials": summary.trials, "steps": summary.steps, "escape_drop": plan.escape_drop,
             "escape_radius": plan.escape_radius, "frac_drop": summary.frac_drop,
             "frac_increase": summary.frac_increase, "frac_displaced": summary.frac_displaced}]
    _emit(rows, args, "escape.csv")


def cmd_audit(args) -> None:
    trace = read_trace(args.trace)
    problem = _problem_from_trace(trace)
    d = descent_audit(trace, problem)
    rows = [{"check": "descent", "fitted_c": d.c_descent, "worst_t0": d.worst_descent[0],
             "worst_t": d.worst_descent[1], "windows": d.windows},
            {"check": "localize", "fitted_c": d.c_localize, "worst_t0": d.worst_localize[0],
             "worst_t": d.worst_localize[1], "windows": d.windows}]
    if trace.points is not None:
        b = bucket_audit(trace, problem)
        rows.append({"check": "large_grad_count", "fitted_c": b.large_grad_count, "worst_t0": "",
                     "worst_t": "", "windows": trace.iterations})
        rows.append({"check": "saddle_count", "fitted_c": b.saddle_count, "worst_t0": "",
                     "worst_t": "", "windows": b.sampled})
        rows.append({"check": "saddle_buckets", "fitted_c": len(b.buckets.saddle_buckets), "worst_t0": "",
                     "worst_t": "", "windows": len(b.buckets.per_bucket_drop)})
    _emit(rows, args, "audit.csv")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    eps = [float(e) for e in args.eps.split(",")] if args.eps else list(SWEEP_EPSILONS)
    table = sweep_epsilon(cfg, eps)
    _emit(table.as_rows(), args, "sweep.csv")
    print(f"spearman={table.spearman():.4f} baseline_ratio={table.baseline_ratio():.4g}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--constants", help="constant overrides, e.g. c_iters=4,c_drop=1")
    quick = argparse.ArgumentParser(add_help=False)
    quick.add_argument("--preset", help="problem preset (instead of --config)")
    quick.add_argument("--epsilon", type=float)
    quick.add_argument("--delta", type=float, default=0.01)
    quick.add_argument("--batch-size", type=int, default=100)

    parser = argparse.ArgumentParser(prog="dpsosp", description="Private SGD saddle-escape experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("calibrate", parents=[common, quick], help="resolve and print the noise plan")
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("run", parents=[common, quick], help="run DP-SGD and write traces")
    p.add_argument("--mode", choices=("clip", "no-clip"))
    p.add_argument("--plan", help="key=value file overriding plan fields")
    p.add_argument("--steps", type=int)
    p.add_argument("--no-coords", action="store_true", help="omit coordinates from the trace")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("check-sosp", parents=[common], help="check stationarity along a stored trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--private", action="store_true", help="private AboveThreshold selection")
    p.add_argument("--max-points", type=int, default=500)
    p.add_argument("--eig-method", choices=("power", "dense"), default="power")
    p.set_defaults(func=cmd_check_sosp)
    p = sub.add_parser("escape-demo", parents=[common, quick], help="saddle-escape statistics")
    p.add_argument("--trials", type=int, default=500)
    p.set_defaults(func=cmd_escape)
    p = sub.add_parser("audit", parents=[common], help="descent and bucket audits of a stored trace")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_audit)
    p = sub.add_parser("sweep-eps", parents=[common, quick], help="final objective gap versus epsilon")
    p.add_argument("--eps", help="comma-separated epsilons (default 1/8..8)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DpsospError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
