"""Receding-horizon simulation harness.

Each control step measures the plant, warm-starts the planner from the
previous plan shifted by one knot, runs a budgeted SQP solve, and applies the
first control of the plan with a zero-order hold for one control period.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .kktcore import Trajectory
from .models import CostModel, DynamicsModel
from .sqp import SqpConfig, sqp_solve
from .timing import VirtualClock, WallClock

log = logging.getLogger(__name__)

STEPS_HEADER = ["step", "time_s", "solve_us", "sqp_iters", "pcg_iters_total", "tracking_err"]
CDF_HEADER = ["solve_us", "cumulative_fraction"]


def fmt(x) -> str:
    """Locale-free CSV formatting: ints as-is, floats with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".9g")
    return str(x)


@dataclass
class Goal:
    t: float
    state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)


@dataclass
class NmpcConfig:
    control_rate: float = 100.0
    sim_duration: float = 10.0
    N: int = 32
    goals: list = field(default_factory=list)
    solver: SqpConfig = field(default_factory=SqpConfig)
    sim_substeps: int = 4
    h: float = None
    x0: np.ndarray = None
    warm_start: bool = True
    deterministic: bool = False

    def __post_init__(self):
        if not self.control_rate > 0:
            raise ValueError(f"control_rate must be positive, got {self.control_rate}")
        if self.N < 2:
            raise ValueError(f"N (knot count) must be >= 2, got {self.N}")
        if not self.goals:
            raise ValueError("goals must be nonempty")
        self.goals = sorted((g if isinstance(g, Goal) else Goal(*g) for g in self.goals), key=lambda g: g.t)
        if self.sim_substeps < 1:
            raise ValueError("sim_substeps must be >= 1")

    @property
    def period(self) -> float:
        return 1.0 / self.control_rate

    @property
    def timestep(self) -> float:
        return self.period if self.h is None else self.h

    @property
    def n_steps(self) -> int:
        return int(round(self.control_rate * self.sim_duration))

    def goal_at(self, t: float) -> np.ndarray:
        active = self.goals[0]
        for g in self.goals:
            if g.t <= t + 1e-12:
                active = g
        return active.state

    def segment_of(self, t: float) -> int:
        return max(i for i, g in enumerate(self.goals) if g.t <= t + 1e-12 or i == 0)


@dataclass
class StepRecord:
    step: int
    time_s: float
    solve_s: float
    sqp_iters: int
    pcg_iters_total: int
    tracking_err: float
    segment: int
    merit_monotone: bool
    overrun: bool


@dataclass
class NmpcStats:
    records: list = field(default_factory=list)
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def solve_times(self) -> np.ndarray:
        return self.column("solve_s")

    def percentiles(self, qs=(50, 90, 99)) -> dict:
        t = self.solve_times
        return {f"p{q}": float(np.percentile(t, q)) for q in qs} if t.size else {}

    def pcg_per_solve(self) -> np.ndarray:
        """Mean PCG iterations per linear solve within each control step."""
        return self.column("pcg_iters_total") / np.maximum(self.column("sqp_iters"), 1)

    def segment_final_errors(self) -> list:
        """Tracking error at the last control step of each goal segment."""
        out = {}
        for r in self.records:
            out[r.segment] = r.tracking_err
        return [out[k] for k in sorted(out)]

    def summary(self) -> dict:
        errs = self.column("tracking_err")
        return {
            "steps": len(self.records),
            "mean_solve_us": float(self.solve_times.mean() * 1e6) if self.records else 0.0,
            "solve_us_percentiles": {k: v * 1e6 for k, v in self.percentiles().items()},
            "avg_sqp_iters": float(self.column("sqp_iters").mean()) if self.records else 0.0,
            "median_pcg_iters_per_solve": float(np.median(self.pcg_per_solve())) if self.records else 0.0,
            "mean_tracking_err": float(errs.mean()) if self.records else 0.0,
            "segment_final_errors": self.segment_final_errors(),
            "merit_monotone": bool(all(r.merit_monotone for r in self.records)),
            "overruns": int(sum(r.overrun for r in self.records)),
        }

    def write_steps_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STEPS_HEADER)
            for r in self.records:
                w.writerow([fmt(r.step), fmt(r.time_s), fmt(r.solve_s * 1e6), fmt(r.sqp_iters),
                            fmt(r.pcg_iters_total), fmt(r.tracking_err)])

    def write_cdf_csv(self, path):
        times = np.sort(self.solve_times * 1e6)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CDF_HEADER)
            for i, t in enumerate(times):
                w.writerow([fmt(t), fmt((i + 1) / times.size)])


def shift_warm_start(traj: Trajectory, lam):
    """Drop the first knot and duplicate the last one, for states, controls and multipliers."""
    X = np.vstack([traj.X[1:], traj.X[-1:]])
    U = np.vstack([traj.U[1:], traj.U[-1:]]) if traj.N else traj.U.copy()
    L = np.asarray(lam, dtype=float).reshape(traj.knots, traj.n)
    L = np.vstack([L[1:], L[-1:]]).reshape(-1)
    return Trajectory(X, U, traj.h, L.copy()), L


def _plant_step(model: DynamicsModel, x, u, period, substeps):
    dt = period / substeps
    for _ in range(substeps):
        x = model.step(x, u, dt)
    return x


def run_nmpc(cfg: NmpcConfig, model: DynamicsModel, cost: CostModel) -> NmpcStats:
    """Closed-loop simulation; ``cost`` supplies the weights, ``cfg.goals`` the targets."""
    h = cfg.timestep
    knots = cfg.N
    n, m = model.n, model.m
    pos = list(model.position_indices)
    x = np.array(cfg.x0 if cfg.x0 is not None else cfg.goals[0].state, dtype=float)
    clock = VirtualClock() if cfg.deterministic else WallClock()
    solver = cfg.solver
    if solver.time_budget is None:
        solver = SqpConfig(**{**solver.__dict__, "time_budget": cfg.period})

    traj = Trajectory.constant(x, knots - 1, m, h)
    lam = np.zeros(knots * n)
    stats = NmpcStats()
    for k in range(cfg.n_steps):
        t = k * cfg.period
        if k > 0:
            traj, lam = shift_warm_start(traj, lam)
        if not cfg.warm_start:
            lam = np.zeros_like(lam)
        # the active goal is revealed when it becomes active, no preview
        step_cost = CostModel(cost.W_x, cost.W_u, cost.W_N, np.tile(cfg.goal_at(t), (knots, 1)))
        t0 = clock.now()
        try:
            traj, lam, sstats = sqp_solve(traj, lam, x, model, step_cost, solver, clock=clock)
        except Exception as exc:
            raise RuntimeError(f"solver failed at control step {k}: {exc}") from exc
        solve_s = clock.now() - t0
        err = float(np.linalg.norm(x[pos] - cfg.goal_at(t)[pos]))
        stats.records.append(StepRecord(k, t, solve_s, sstats.n_iter, sstats.pcg_iterations, err,
                                        cfg.segment_of(t), sstats.merit_monotone(), solve_s > cfg.period))
        stats.states.append(x.copy())
        u = traj.U[0].copy()
        stats.controls.append(u)
        x = _plant_step(model, x, u, cfg.period, cfg.sim_substeps)
        if not np.all(np.isfinite(x)):
            raise RuntimeError(f"plant state became non-finite at control step {k}")
    overruns = sum(r.overrun for r in stats.records)
    if overruns:
        log.info("%d of %d control steps overran the %.3g s period", overruns, len(stats.records), cfg.period)
    return stats
