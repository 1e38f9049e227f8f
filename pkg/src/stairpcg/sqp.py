"""SQP outer loop with a parallel line search on the L1 merit function."""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .kktcore import Trajectory, assemble_kkt, reconstruct_primal
from .models import CostModel, DynamicsModel, eval_cost
from .pcg import PcgConfig, SolveReport, solve as pcg_dispatch
from .schur import build_preconditioner, build_schur
from .timing import WallClock, modeled_sqp_iteration_time

DEFAULT_ALPHAS = tuple(2.0**-i for i in range(8))
DEFAULT_MU = 10.0


@dataclass
class MeritParams:
    mu: float = DEFAULT_MU
    alphas: tuple = DEFAULT_ALPHAS
    mu_rule: str = "fixed"
    # decreases smaller than this fraction of |M| are rounding noise, not progress
    min_decrease: float = 1e-12

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        a = np.asarray(self.alphas)
        if a.size == 0:
            raise ValueError("alphas must be nonempty")
        if a[0] != 1.0 or np.any(a <= 0) or np.any(a > 1) or np.any(np.diff(a) >= 0):
            raise ValueError(f"alphas must start at 1 and strictly decrease within (0, 1], got {self.alphas}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.mu_rule not in ("fixed", "multiplier_max"):
            raise ValueError(f"unknown mu_rule {self.mu_rule!r}")

    def penalty(self, lam) -> float:
        if self.mu_rule == "multiplier_max":
            return max(1.1 * float(np.abs(lam).max(initial=0.0)), self.mu)
        return self.mu


@dataclass
class SqpConfig:
    max_sqp_iter: int = 10
    pcg: PcgConfig = field(default_factory=PcgConfig)
    merit: MeritParams = field(default_factory=MeritParams)
    time_budget: float = None
    preconditioner: str = "symstair"
    # a failed line search with a step this small counts as converged
    step_tol: float = 1e-9

    def __post_init__(self):
        if self.max_sqp_iter < 1:
            raise ValueError(f"max_sqp_iter must be >= 1, got {self.max_sqp_iter}")


def constraint_residual(traj: Trajectory, model: DynamicsModel, x_s) -> np.ndarray:
    """Initial-condition mismatch followed by the dynamics defects."""
    f = model.step(traj.X[:-1], traj.U, traj.h)
    return np.concatenate([np.asarray(x_s, dtype=float) - traj.X[0], (traj.X[1:] - f).reshape(-1)])


def constraint_l1(traj, model, x_s) -> float:
    return float(np.abs(constraint_residual(traj, model, x_s)).sum())


def merit(traj: Trajectory, model: DynamicsModel, cost: CostModel, mu: float, x_s) -> float:
    """``J + mu * |c|_1``."""
    return eval_cost(cost, traj.X, traj.U) + mu * constraint_l1(traj, model, x_s)


class LineSearchError(RuntimeError):
    pass


@dataclass
class LineSearchResult:
    alpha: float
    traj: Trajectory
    merit: float
    progress: bool
    current_merit: float
    candidate_merits: list

    def __iter__(self):
        return iter((self.alpha, self.traj, self.merit))


def parallel_line_search(traj: Trajectory, dz, model: DynamicsModel, cost: CostModel, params: MeritParams,
                         x_s, mu=None, executor: Executor = None) -> LineSearchResult:
    """Evaluate the merit at every candidate step and keep the best.

    Ties go to the larger step. When no candidate beats the current merit by
    more than rounding noise (``params.min_decrease``) the trajectory is
    returned unchanged with ``alpha = 0`` and ``progress=False``.
    """
    mu = params.mu if mu is None else mu
    current = merit(traj, model, cost, mu, x_s)
    candidates = [traj.stepped(dz, a) for a in params.alphas]

    def evaluate(t):
        with np.errstate(all="ignore"):
            value = merit(t, model, cost, mu, x_s)
        return value if np.isfinite(value) else np.inf

    values = list(executor.map(evaluate, candidates)) if executor is not None else [evaluate(t) for t in candidates]
    if not np.any(np.isfinite(values)):
        raise LineSearchError("merit is non-finite for every line-search candidate")
    # argmin returns the first minimum, i.e. the largest alpha
    best = int(np.argmin(values))
    if values[best] < current - params.min_decrease * max(abs(current), 1.0):
        return LineSearchResult(params.alphas[best], candidates[best], values[best], True, current, values)
    return LineSearchResult(0.0, traj, current, False, current, values)


@dataclass
class SqpIteration:
    iteration: int
    alpha: float
    merit_before: float
    merit_after: float
    mu: float
    constraint_l1: float
    step_inf: float
    progress: bool
    pcg: SolveReport
    lambda_in: np.ndarray = field(repr=False, default=None)
    lambda_out: np.ndarray = field(repr=False, default=None)


@dataclass
class SqpStats:
    iterations: list = field(default_factory=list)
    exit_reason: str = ""
    elapsed: float = 0.0

    @property
    def n_iter(self) -> int:
        return len(self.iterations)

    @property
    def accepted(self) -> int:
        return sum(it.progress for it in self.iterations)

    @property
    def pcg_iterations(self) -> int:
        return sum(it.pcg.iterations for it in self.iterations)

    def merit_monotone(self) -> bool:
        """Merit after every accepted step is no larger than the previous accepted one."""
        accepted = [it.merit_after for it in self.iterations if it.progress]
        return all(b <= a for a, b in zip(accepted, accepted[1:]))


def sqp_step(traj: Trajectory, lam, x_s, model, cost, cfg: SqpConfig):
    """One linearize / Schur / PCG / reconstruct pass; returns ``(dz, lam, report)``."""
    kkt = assemble_kkt(traj, model, cost, x_s)
    schur = build_schur(kkt)
    P = build_preconditioner(schur, cfg.preconditioner)
    lam_new, report = pcg_dispatch(schur.S, P, schur.gamma, lam, cfg.pcg)
    dz = reconstruct_primal(kkt, lam_new)
    return dz, lam_new, report


def sqp_solve(traj0: Trajectory, lambda0, x_s, model: DynamicsModel, cost: CostModel, cfg: SqpConfig = None,
              clock=None, executor: Executor = None):
    """Run SQP iterations until convergence, budget exhaustion or stalled progress.

    Returns ``(traj, lam, stats)``. The multipliers of each PCG solve are
    warm-started from the previous iteration's solution.
    """
    cfg = cfg or SqpConfig()
    clock = clock or WallClock()
    start = clock.now()
    traj = traj0.copy()
    lam = np.zeros(traj.X.size) if lambda0 is None else np.array(lambda0, dtype=float)
    stats = SqpStats()
    failures = 0
    mu = cfg.merit.mu

    for it in range(1, cfg.max_sqp_iter + 1):
        lam_in = lam.copy()
        dz, lam, report = sqp_step(traj, lam, x_s, model, cost, cfg)
        if it == 1:
            # penalty is fixed for the rest of the solve so merits stay comparable
            mu = cfg.merit.penalty(lam)
        result = parallel_line_search(traj, dz, model, cost, cfg.merit, x_s, mu=mu, executor=executor)
        step_inf = float(np.abs(dz).max(initial=0.0))
        traj = result.traj
        traj.lam = lam.copy()
        stats.iterations.append(SqpIteration(
            it, result.alpha, result.current_merit, result.merit, mu, constraint_l1(traj, model, x_s),
            result.alpha * step_inf, result.progress, report, lam_in, lam.copy()))
        clock.charge(modeled_sqp_iteration_time(traj.knots, traj.n, traj.m, report.iterations,
                                                len(cfg.merit.alphas)))

        if result.progress:
            failures = 0
            if result.alpha * step_inf <= cfg.step_tol:
                stats.exit_reason = "converged"
                break
        else:
            failures += 1
            if step_inf <= cfg.step_tol:
                stats.exit_reason = "converged"
                break
            if failures >= 2:
                stats.exit_reason = "no_progress"
                break
        if cfg.time_budget is not None and clock.now() - start >= cfg.time_budget:
            stats.exit_reason = "time_budget"
            break
    else:
        stats.exit_reason = "max_iter"
    stats.elapsed = clock.now() - start
    return traj, lam, stats
