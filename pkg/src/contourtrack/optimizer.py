"""Constrained local search and Basin-Hopping over the 6-vector pose chart."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InfeasibleStart

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
CONSTRAINT_TOL = 1e-6
TEMPERATURE_FLOOR = 1e-6
WARMUP_HOPS = 5
MAX_RESAMPLES = 20


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs matching lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class Nonlinear:
    """Scalar inequality ``fun(x) <= 0``."""

    fun: Callable[[np.ndarray], float]


def _split(constraints: Sequence) -> tuple[Box | None, Nonlinear | None]:
    box = ineq = None
    for c in constraints or ():
        if isinstance(c, Box):
            if box is not None:
                raise ValueError("at most one box constraint")
            box = c
        elif isinstance(c, Nonlinear):
            if ineq is not None:
                raise ValueError("at most one nonlinear constraint")
            ineq = c
        else:
            raise TypeError(f"unsupported constraint {c!r}")
    return box, ineq


def is_feasible(x, constraints: Sequence, tol: float = FEAS_TOL) -> bool:
    box, ineq = _split(constraints)
    if box is not None and not box.contains(x, tol):
        return False
    return ineq is None or ineq.fun(x) <= tol


def local_optimize(objective, gradient, x0, constraints: Sequence = (), max_iter: int = 100,
                   ftol: float = 1e-9) -> tuple[np.ndarray, float]:
    """SLSQP from a feasible ``x0``; never returns a worse or infeasible point.

    If the solver ends outside the feasible set (beyond a 1e-6 slack on the
    nonlinear constraint) or above ``f(x0)``, ``x0`` itself is returned.
    """
    x0 = np.asarray(x0, dtype=float)
    box, ineq = _split(constraints)
    if not is_feasible(x0, constraints):
        raise InfeasibleStart("starting point violates the constraints")
    f0 = float(objective(x0))
    kwargs = {}
    if box is not None:
        kwargs["bounds"] = list(zip(box.lower, box.upper))
    if ineq is not None:
        kwargs["constraints"] = [{"type": "ineq", "fun": lambda x: -ineq.fun(x)}]
    with warnings.catch_warnings():
        # SLSQP clips its own line-search probes back into the box; that is expected
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = minimize(objective, x0, jac=gradient, method="SLSQP",
                       options={"maxiter": max_iter, "ftol": ftol}, **kwargs)
    x = np.asarray(res.x, dtype=float)
    if box is not None:
        x = np.clip(x, box.lower, box.upper)
    if not np.all(np.isfinite(x)) or (ineq is not None and ineq.fun(x) > CONSTRAINT_TOL):
        return x0, f0
    f = float(objective(x))
    if not f <= f0:
        return x0, f0
    return x, f


@dataclass(frozen=True)
class HopSchedule:
    min_hops: int
    max_effectless: int
    max_hops: int
    temperature: float | None = None
    step_scale: np.ndarray | None = None

    def __post_init__(self):
        if min(self.min_hops, self.max_effectless, self.max_hops) < 1:
            raise ValueError("hop counts must be >= 1")
        if self.min_hops > self.max_hops:
            raise ValueError("min_hops exceeds max_hops")


def hop_schedule(num_vertices: int, num_faces: int, temperature: float | None = None,
                 step_scale=None) -> HopSchedule:
    """Termination counts scaled by mesh size: ``s = max(1, 25000 / (|V| + |F|))``."""
    if num_vertices < 1 or num_faces < 1:
        raise ValueError("mesh counts must be positive")
    s = max(1.0, 25000.0 / (num_vertices + num_faces))

    def count(x: float) -> int:
        return max(1, int(math.floor(x + 0.5)))

    return HopSchedule(count(min(10 * s, 100)), count(min(5 * s, 30)), count(min(30 * s, 200)),
                       temperature, None if step_scale is None else np.asarray(step_scale, dtype=float))


@dataclass
class HopResult:
    x: np.ndarray
    fun: float
    hops: int
    accepted: int
    best_trace: list = field(default_factory=list)


def _propose(rng, x_cur, step, box: Box | None, ineq: Nonlinear | None):
    x = x_cur
    for _ in range(MAX_RESAMPLES):
        x = x_cur + rng.uniform(-step, step)
        if (box is None or box.contains(x)) and (ineq is None or ineq.fun(x) <= 0.0):
            return x
    if box is not None:
        x = np.clip(x, box.lower, box.upper)
    if ineq is None or ineq.fun(x) <= 0.0:
        return x
    return None


def basin_hopping(objective, gradient, x0, constraints: Sequence, schedule: HopSchedule,
                  seed: int = 0, step_scale=None, local_max_iter: int = 100,
                  local_ftol: float = 1e-9) -> HopResult:
    """Minimize ``objective`` by random hops + local search with Metropolis acceptance.

    Stops after ``max_hops`` hops, or once ``min_hops`` are done and the global
    best has not improved for ``max_effectless`` consecutive hops. Without a fixed
    temperature, it is 0.1 times the spread of local minima seen over the first
    five hops (floored at 1e-6).
    """
    box, ineq = _split(constraints)
    x0 = np.asarray(x0, dtype=float)
    if not is_feasible(x0, constraints):
        raise InfeasibleStart("starting point violates the constraints")
    step = step_scale if step_scale is not None else schedule.step_scale
    if step is None:
        step = np.full(len(x0), 0.1)
    step = np.asarray(step, dtype=float)
    rng = np.random.default_rng(seed)

    def local(x):
        return local_optimize(objective, gradient, x, constraints, local_max_iter, local_ftol)

    x_cur, f_cur = local(x0)
    x_best, f_best = x_cur, f_cur
    warmup = [f_cur]
    temperature = schedule.temperature
    hops = accepted = effectless = 0
    trace = [f_best]
    while hops < schedule.max_hops:
        if hops >= schedule.min_hops and effectless >= schedule.max_effectless:
            break
        hops += 1
        x_try = _propose(rng, x_cur, step, box, ineq)
        u = rng.random()
        if x_try is None:
            effectless += 1
            trace.append(f_best)
            continue
        x_new, f_new = local(x_try)
        if schedule.temperature is None:
            if len(warmup) <= WARMUP_HOPS:
                warmup.append(f_new)
            temperature = max(TEMPERATURE_FLOOR, 0.1 * float(np.std(warmup)))
        delta = f_new - f_cur
        if delta <= 0.0 or u < math.exp(-delta / temperature):
            x_cur, f_cur = x_new, f_new
            accepted += 1
        if f_new < f_best:
            x_best, f_best = x_new, f_new
            effectless = 0
        else:
            effectless += 1
        trace.append(f_best)
    log.debug("basin hopping: %d hops, %d accepted, best %.6g", hops, accepted, f_best)
    return HopResult(x_best, f_best, hops, accepted, trace)


# -- two-stage pose refinement ------------------------------------------------

@dataclass(frozen=True)
class RefineSettings:
    """Knobs for :func:`refine`. ``trans_step`` is a fraction of the model diameter."""

    sigma: float = 1.1
    final_hops: int = 5
    rot_step_deg: float = 10.0
    trans_step: float = 0.05
    temperature: float | None = None
    local_max_iter: int = 100
    local_ftol: float = 1e-9
    schedule: HopSchedule | None = None

    def step_scale(self, diameter: float) -> np.ndarray:
        r = math.radians(self.rot_step_deg)
        return np.array([r, r, r] + [self.trans_step * diameter] * 3)


@dataclass
class RefineResult:
    pose: object
    params: np.ndarray
    energy: float
    samples: int
    hops: tuple[int, int]


def refine(frame, mesh, k, init, constraints: Sequence = (), seed: int = 0, *,
           settings: RefineSettings | None = None, ico=None, vmap=None, **energy_kw) -> RefineResult:
    """Maximize the contour energy around ``init`` in two stages.

    Stage 1 hops on the Gaussian-blurred frame with the mesh-size schedule;
    stage 2 restarts from that optimum on the unblurred frame for a fixed number
    of hops. ``constraints`` live in the 6-vector chart anchored at ``init``.
    Extra keywords (``detector``, ``diameter``, ``theta_sharp`` ...) go to
    :class:`EnergyContext`; passing a prebuilt ``detector`` avoids rebuilding edge tables.
    """
    from .energy import EnergyContext
    from .image import gaussian_blur, gradient

    cfg = settings or RefineSettings()
    base = EnergyContext(gradient(frame), mesh, k, init, ico=ico, vmap=vmap, **energy_kw)
    blurred = base.with_field(gradient(gaussian_blur(frame, cfg.sigma))) if cfg.sigma > 0 else base
    sched = cfg.schedule or hop_schedule(mesh.n_vertices, mesh.n_faces)
    if cfg.temperature is not None:
        sched = HopSchedule(sched.min_hops, sched.max_effectless, sched.max_hops,
                            cfg.temperature, sched.step_scale)
    step = sched.step_scale if sched.step_scale is not None else cfg.step_scale(base.diameter)

    def run(ctx, x0, schedule, seed_):
        return basin_hopping(lambda x: -ctx.energy(x), lambda x: -ctx.gradient(x), x0, constraints,
                             schedule, seed_, step, cfg.local_max_iter, cfg.local_ftol)

    ss = np.random.SeedSequence(seed)
    s1, s2 = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    first = run(blurred, np.zeros(6), sched, s1)
    hops = (first.hops, 0)
    x = first.x
    if cfg.final_hops > 0:
        final = HopSchedule(cfg.final_hops, cfg.final_hops, cfg.final_hops,
                            sched.temperature, sched.step_scale)
        second = run(base, first.x, final, s2)
        x = second.x
        hops = (first.hops, second.hops)
    energy, count = base.evaluate(x)
    return RefineResult(base.pose(x), x, energy, count, hops)


def refine_pose(frame, mesh, k, init, constraints: Sequence = (), seed: int = 0, **kw):
    """Pose returned by :func:`refine`."""
    return refine(frame, mesh, k, init, constraints, seed, **kw).pose
