"""DP-SGD with and without per-sample clipping.

``run`` executes one seeded run; ``run_many`` advances several independent
runs in lockstep (each with its own keyed streams), which is how the
Monte-Carlo experiments stay fast.  A run's result does not depend on which
other runs it was batched with.

Each run draws minibatches from stream ``(seed, "batch")`` and Gaussian noise
from ``(seed, "gauss")``, so a clipped and an unclipped run with the same seed
see the same randomness.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivergenceError, InputError
from .privacy import NoisePlan
from .problem import OracleSet, Problem, minibatch_gradient
from .rng import BLOCK, distinct_rows, stream

MODES = ("clip", "no-clip")


@dataclass
class RunTrace:
    """Per-iteration record of one run.

    ``points``, ``objective`` and ``grad_norm`` have ``T + 1`` entries (``x_0``
    to ``x_T``); ``clip_events`` and ``max_sample_grad`` have ``T`` entries,
    one per step, measured at ``x_t``.  ``points`` is ``None`` when
    coordinates were not kept; ``digest`` fingerprints the iterates either way.
    ``noise`` holds the injected Gaussian draws only when requested.
    """

    points: Optional[np.ndarray]
    objective: np.ndarray
    grad_norm: np.ndarray
    clip_events: np.ndarray
    max_sample_grad: np.ndarray
    exited_ball: bool
    plan: NoisePlan
    seed: int
    mode: str = "no-clip"
    digest: str = ""
    max_displacement: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    # Free-form provenance (problem preset and overrides); persisted with the trace.
    meta: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.objective) - 1

    @property
    def final_point(self) -> Optional[np.ndarray]:
        return None if self.points is None else self.points[-1]

    def same_path(self, other: "RunTrace") -> bool:
        """True when both runs visited bit-identical iterates."""
        return self.digest == other.digest and self.iterations == other.iterations


@dataclass
class StepRecord:
    grad_norm: float
    clip_count: int
    noise_norm: float
    max_sample_grad: float


def sample_minibatch(n: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """``B`` distinct indices, uniform over size-``B`` subsets of ``range(n)``."""
    if not 1 <= B <= n:
        raise InputError(f"need 1 <= B <= n, got B={B}, n={n}")
    return distinct_rows(n, B, rng, 1)[0]


def clip_gradient(g: np.ndarray, C: float) -> np.ndarray:
    """Rescale ``g`` onto the ball of radius ``C`` if it lies outside."""
    if C <= 0:
        raise InputError("clipping threshold must be positive")
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= C:
        return g.copy()
    return g * (C / norm)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")


def dpsgd_step(x: np.ndarray, oracles: OracleSet, batch, plan: NoisePlan, mode: str,
               rng: np.random.Generator, iteration: int = 0) -> tuple[np.ndarray, StepRecord]:
    """One update ``x - eta * (g + xi)`` with ``xi ~ N(0, gauss_std^2 I)``.

    ``g`` is the batch average of the raw component gradients, or of the
    clipped ones in ``"clip"`` mode.
    """
    _check_mode(mode)
    x = np.asarray(x, dtype=float)
    idx = np.asarray(batch)
    grads = oracles.gradients_at(idx, x)
    norms = np.linalg.norm(grads, axis=1)
    clips = 0
    if mode == "clip":
        over = norms > plan.grad_bound
        clips = int(over.sum())
        if clips:
            grads = grads * np.minimum(1.0, plan.grad_bound / np.where(over, norms, 1.0))[:, None]
        g = grads.mean(axis=0)
    else:
        g = minibatch_gradient(oracles, idx, x)
    xi = plan.gauss_std * rng.standard_normal(x.size)
    x_new = x - plan.step_size * (g + xi)
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite iterate at step {iteration}", iteration)
    return x_new, StepRecord(float(np.linalg.norm(g)), clips, float(np.linalg.norm(xi)), float(norms.max()))


class _Streams:
    """Per-run block buffers for batches and Gaussian draws."""

    def __init__(self, seeds, n, B, dim, need_batches):
        self.batch_gens = [stream(s, "batch") for s in seeds] if need_batches else None
        self.gauss_gens = [stream(s, "gauss") for s in seeds]
        self.n, self.B, self.dim = n, B, dim
        self.pos = BLOCK

    def refill(self):
        self.gauss = np.stack([g.standard_normal((BLOCK, self.dim)) for g in self.gauss_gens], axis=1)
        if self.batch_gens is not None:
            self.batches = np.stack([distinct_rows(self.n, self.B, g, BLOCK) for g in self.batch_gens], axis=1)
        self.pos = 0

    def next(self):
        if self.pos == BLOCK:
            self.refill()
        k = self.pos
        self.pos += 1
        batch = None if self.batch_gens is None else self.batches[k]
        return batch, self.gauss[k]


def _stack_gradients(oracles: OracleSet, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
    if oracles.vectorized and oracles.component_gradients is not None:
        return np.asarray(oracles.component_gradients(idx, X), dtype=float)
    return np.stack([oracles.gradients_at(idx[r], X[r]) for r in range(X.shape[0])])


def _rowwise(fn, X: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        return np.asarray(fn(X), dtype=float)
    return np.stack([np.asarray(fn(x), dtype=float) for x in X])


def run_many(problem: Problem, x0, plan: NoisePlan, mode: str, seeds: Sequence[int], *,
             steps: Optional[int] = None, keep_points: bool = True, keep_noise: bool = False,
             reflect: Optional[Sequence[bool]] = None, direction: Optional[np.ndarray] = None,
             gauss_std: Optional[float] = None) -> list[RunTrace]:
    """Advance ``len(seeds)`` independent runs together.

    ``x0`` is one start point or one per run.  ``steps`` overrides
    ``plan.iterations``.  Runs flagged in ``reflect`` use the mirrored noise
    ``xi - 2 <v, xi> v`` for unit ``direction`` v; ``gauss_std`` overrides the
    plan's noise level (0 gives the noiseless baseline).
    """
    _check_mode(mode)
    seeds = [int(s) for s in seeds]
    R = len(seeds)
    if R == 0:
        raise InputError("need at least one seed")
    T = plan.iterations if steps is None else int(steps)
    if T < 0:
        raise InputError("steps must be nonnegative")
    spec, oracles = problem.spec, problem.oracles
    d, n, B = spec.dim, spec.n_components, plan.batch_size
    if not 1 <= B <= n:
        raise InputError(f"plan batch size {B} incompatible with n={n}")
    X = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (R, d)))
    if not np.all(np.isfinite(X)):
        raise InputError("x0 must be finite")
    X0 = X.copy()
    std = plan.gauss_std if gauss_std is None else float(gauss_std)
    eta, C = plan.step_size, plan.grad_bound
    if mode == "clip" and C <= 0:
        raise InputError("clip mode needs a positive gradient bound")
    flip = np.zeros(R, dtype=bool) if reflect is None else np.asarray(reflect, dtype=bool)
    if flip.any():
        if direction is None:
            raise InputError("reflected runs need a direction")
        v = np.asarray(direction, dtype=float)
        v = v / np.linalg.norm(v)
    vec = oracles.vectorized
    shared = problem.identical_components

    objective = np.empty((T + 1, R))
    grad_norm = np.empty((T + 1, R))
    clip_events = np.zeros((T, R), dtype=np.int64)
    max_sample = np.empty((T, R))
    max_disp = np.zeros((T + 1, R))
    points = np.empty((T + 1, R, d)) if keep_points else None
    noise = np.empty((T, R, d)) if keep_noise else None
    hashers = [hashlib.sha256() for _ in range(R)]
    buf = np.empty((BLOCK, R, d))
    buf_len = 0

    def push(rows):
        nonlocal buf_len
        buf[buf_len] = rows
        buf_len += 1
        if buf_len == BLOCK:
            flush()

    def flush():
        nonlocal buf_len
        if buf_len:
            chunk = np.ascontiguousarray(buf[:buf_len].transpose(1, 0, 2))
            for r in range(R):
                hashers[r].update(chunk[r].tobytes())
        buf_len = 0

    exited = ~np.asarray(problem.in_ball(X), dtype=bool) if problem.clamp_radius is not None else np.zeros(R, bool)
    G = _rowwise(oracles.full_gradient, X, vec)
    objective[0] = _rowwise(oracles.objective, X, vec)
    grad_norm[0] = np.linalg.norm(G, axis=1)
    if keep_points:
        points[0] = X
    push(X)

    src = _Streams(seeds, n, B, d, need_batches=not shared)
    for t in range(T):
        batch, z = src.next()
        if shared:
            # sigma = 0: every component gradient equals the full gradient.
            norms = grad_norm[t]
            max_sample[t] = norms
            g = G
            if mode == "clip":
                over = norms > C
                clip_events[t] = np.where(over, B, 0)
                g = G * np.minimum(1.0, C / np.where(over, norms, 1.0))[:, None]
        else:
            grads = _stack_gradients(oracles, batch, X)
            norms = np.sqrt(np.einsum("rbd,rbd->rb", grads, grads))
            max_sample[t] = norms.max(axis=1)
            if mode == "clip":
                over = norms > C
                clip_events[t] = over.sum(axis=1)
                if over.any():
                    grads = grads * np.minimum(1.0, C / np.where(over, norms, 1.0))[..., None]
            g = np.einsum("rbd->rd", grads) / B
        xi = std * z
        if flip.any():
            xi = xi.copy()
            xi[flip] -= 2.0 * (xi[flip] @ v)[:, None] * v
        if keep_noise:
            noise[t] = xi
        X = X - eta * (g + xi)
        if not np.all(np.isfinite(X)):
            raise DivergenceError(f"non-finite iterate at step {t + 1}", t + 1)
        G = _rowwise(oracles.full_gradient, X, vec)
        objective[t + 1] = _rowwise(oracles.objective, X, vec)
        grad_norm[t + 1] = np.linalg.norm(G, axis=1)
        max_disp[t + 1] = np.maximum(max_disp[t], np.linalg.norm(X - X0, axis=1))
        if problem.clamp_radius is not None:
            exited |= np.linalg.norm(X, axis=1) > problem.clamp_radius
        if keep_points:
            points[t + 1] = X
        push(X)
    flush()

    traces = []
    for r in range(R):
        traces.append(RunTrace(
            points=None if points is None else points[:, r].copy(),
            objective=objective[:, r].copy(),
            grad_norm=grad_norm[:, r].copy(),
            clip_events=clip_events[:, r].copy(),
            max_sample_grad=max_sample[:, r].copy(),
            exited_ball=bool(exited[r]),
            plan=plan,
            seed=seeds[r],
            mode=mode,
            digest=hashers[r].hexdigest(),
            max_displacement=max_disp[:, r].copy(),
            noise=None if noise is None else noise[:, r].copy(),
        ))
    return traces


def run(problem: Problem, x0, plan: NoisePlan, mode: str = "no-clip", seed: int = 0, **kw) -> RunTrace:
    """Run ``plan.iterations`` DP-SGD steps from ``x0``; see :func:`run_many` for options."""
    return run_many(problem, x0, plan, mode, [seed], **kw)[0]


def default_start(problem: Problem, seed: int, escape: bool = True, scale: float = 1e-3) -> np.ndarray:
    """Start point: the saddle plus a ``scale``-sized random kick, or a random ball point."""
    gen = stream(seed, "start")
    u = gen.standard_normal(problem.dim)
    u /= np.linalg.norm(u)
    truth = problem.truth
    if escape and truth is not None:
        return np.asarray(truth.saddle, dtype=float) + scale * u
    radius = problem.clamp_radius or 1.0
    return u * radius * gen.random() ** (1.0 / problem.dim)
