"""Clocks used for solver time budgets.

:class:`WallClock` reads ``time.perf_counter``. :class:`VirtualClock` only
advances when work is charged to it through the cost model below, which
makes budgeted runs bit-for-bit reproducible (``--deterministic``).
"""
from __future__ import annotations

import time

# Cost-model coefficients in seconds, roughly calibrated to the numpy kernels
# on a single desktop core.
SQP_FIXED = 4.0e-4
SQP_PER_KNOT_FLOP = 2.0e-9
PCG_FIXED = 2.5e-5
PCG_PER_BLOCK_FLOP = 3.5e-10
LINE_SEARCH_PER_CANDIDATE_KNOT = 1.5e-6


class WallClock:
    deterministic = False

    def now(self) -> float:
        return time.perf_counter()

    def charge(self, seconds: float) -> None:
        pass


class VirtualClock:
    deterministic = True

    def __init__(self, start: float = 0.0):
        self.t = start

    def now(self) -> float:
        return self.t

    def charge(self, seconds: float) -> None:
        self.t += seconds


def modeled_pcg_time(knots: int, nb: int, iterations: int) -> float:
    """Two block-tridiagonal matvecs and a few vector ops per iteration."""
    per_iter = PCG_FIXED + PCG_PER_BLOCK_FLOP * knots * (12 * nb * nb + 10 * nb)
    return per_iter * (iterations + 1)


def modeled_sqp_iteration_time(knots: int, n: int, m: int, pcg_iterations: int, n_alphas: int) -> float:
    """Linearization, Schur/preconditioner build, PCG, reconstruction and line search."""
    build = SQP_FIXED + SQP_PER_KNOT_FLOP * knots * (6 * n**3 + 4 * n * n * m + 2 * m**3)
    search = LINE_SEARCH_PER_CANDIDATE_KNOT * n_alphas * knots
    return build + modeled_pcg_time(knots, n, pcg_iterations) + search


def modeled_direct_time(knots: int, n: int, m: int) -> float:
    """Banded factorization of the KKT system, linear in the horizon length."""
    return SQP_FIXED + SQP_PER_KNOT_FLOP * knots * (2 * n + m) ** 3
