"""Preconditioned conjugate gradient for the block-tridiagonal Schur system.

Two variants share one set of semantics:

* :func:`pcg_solve` is the plain sequential loop.
* :func:`pcg_solve_block_parallel` is organised around ``N + 1`` logical block
  workers. Every worker only touches its own block of ``lam``, ``r``,
  ``r_tilde`` and ``p`` plus a one-block halo of its neighbours, and the
  scalars ``eta``, ``upsilon`` and ``eta'`` come from explicit reductions over
  per-block partial sums. Workers are executed as batched numpy operations
  across the block axis.

The exit test is ``eta' = r' Phi^-1 r < epsilon``, so ``epsilon`` is measured
in the preconditioner's metric.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .blocktri import DIAG, LEFT, RIGHT, BlockTriMatrix
from .schur import Preconditioner, apply_preconditioner

VARIANTS = ("sequential", "block_parallel")


class PcgError(RuntimeError):
    pass


class PcgBreakdown(PcgError):
    """``p' S p <= 0``: the system (or preconditioner) is not positive definite."""


class PcgNonFinite(PcgError):
    pass


@dataclass
class PcgConfig:
    epsilon: float = 1e-4
    max_iter: int = None
    deterministic_reductions: bool = True
    variant: str = "sequential"
    record_trace: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class SolveReport:
    iterations: int
    exit_eta: float
    converged: bool
    wall_time: float = 0.0
    trace: list = None
    # (eta, upsilon, eta') per iteration when tracing
    scalars: list = field(default=None, repr=False)


def tree_reduce(values) -> float:
    """Sum with a fixed pairwise tree: ``((v0 + v1) + (v2 + v3)) + ...``."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return 0.0
    while vals.size > 1:
        if vals.size % 2:
            vals = np.append(vals, 0.0)
        vals = vals[0::2] + vals[1::2]
    return float(vals[0])


def _check_inputs(S: BlockTriMatrix, gamma, lambda0):
    gamma = np.asarray(gamma, dtype=float)
    lam = np.zeros(S.dim) if lambda0 is None else np.array(lambda0, dtype=float)
    for name, v in (("gamma", gamma), ("lambda0", lam)):
        if v.shape != (S.dim,):
            raise ValueError(f"dimension mismatch: expected {name} of length {S.dim}, got {v.shape[0]}")
    return gamma, lam


def _dot_fn(cfg: PcgConfig, nb: int):
    """``u'v``; deterministic mode sums per-block partials with :func:`tree_reduce`."""
    if not cfg.deterministic_reductions:
        return lambda u, v: float(u @ v)
    return lambda u, v: tree_reduce(np.einsum("bi,bi->b", u.reshape(-1, nb), v.reshape(-1, nb)))


def _max_iter(cfg: PcgConfig, dim: int) -> int:
    return cfg.max_iter if cfg.max_iter is not None else dim


def pcg_solve(S: BlockTriMatrix, P: Preconditioner, gamma, lambda0=None, cfg: PcgConfig = None, callback=None):
    """Solve ``S lam = gamma``; returns ``(lam, SolveReport)``.

    ``callback(iteration, lam, r)`` is called after every update when given.
    """
    cfg = cfg or PcgConfig()
    start = time.perf_counter()
    gamma, lam = _check_inputs(S, gamma, lambda0)
    dot = _dot_fn(cfg, S.nb)
    trace = [] if cfg.record_trace else None
    scalars = [] if cfg.record_trace else None

    r = gamma - S.matvec(lam)
    r_tilde = apply_preconditioner(P, r)
    p = r_tilde.copy()
    eta = dot(r, r_tilde)
    if eta == 0.0:
        return lam, SolveReport(0, 0.0, True, time.perf_counter() - start, trace, scalars)

    eta_new = eta
    for it in range(1, _max_iter(cfg, S.dim) + 1):
        Sp = S.matvec(p)
        upsilon = dot(p, Sp)
        if not upsilon > 0.0:
            raise PcgBreakdown(f"p'Sp = {upsilon:.3e} at iteration {it}; S is not positive definite")
        alpha = eta / upsilon
        r -= alpha * Sp
        lam += alpha * p
        r_tilde = apply_preconditioner(P, r)
        eta_new = dot(r, r_tilde)
        if not (np.isfinite(eta_new) and np.all(np.isfinite(lam))):
            raise PcgNonFinite(f"non-finite iterate at iteration {it}")
        if callback is not None:
            callback(it, lam, r)
        if trace is not None:
            trace.append(eta_new)
            scalars.append((eta, upsilon, eta_new))
        if eta_new < cfg.epsilon:
            return lam, SolveReport(it, eta_new, True, time.perf_counter() - start, trace, scalars)
        beta = eta_new / eta
        p = r_tilde + beta * p
        eta = eta_new
    return lam, SolveReport(it, eta_new, False, time.perf_counter() - start, trace, scalars)


def _halo(vb: np.ndarray) -> np.ndarray:
    """Window ``(v_{b-1}, v_b, v_{b+1})`` for every block, zero outside the range."""
    padded = np.zeros((vb.shape[0] + 2, vb.shape[1]))
    padded[1:-1] = vb
    return np.stack([padded[:-2], padded[1:-1], padded[2:]], axis=1)


def _row_apply(M: BlockTriMatrix, vb: np.ndarray) -> np.ndarray:
    """Every block-row ``b`` computes ``M_b v_{b-1:b+1}`` from its halo.

    Terms are summed diag, left, right like :func:`btri_matvec`, so both
    variants round identically.
    """
    h = _halo(vb)[..., None]
    y = M.blocks[:, DIAG] @ h[:, 1]
    y += M.blocks[:, LEFT] @ h[:, 0]
    y += M.blocks[:, RIGHT] @ h[:, 2]
    return y[..., 0]


def _precondition_blocks(P: Preconditioner, rb: np.ndarray) -> np.ndarray:
    if P.kind == "identity":
        return rb.copy()
    y = _row_apply(P.data, rb)
    if P.kind != "poly_split":
        return y
    out = y.copy()
    for _ in range(P.order):
        # each term needs two further halo exchanges
        y = _row_apply(P.data, _row_apply(P.remainder, y))
        out += y
    return out


def pcg_solve_block_parallel(S: BlockTriMatrix, P: Preconditioner, gamma, lambda0=None,
                             cfg: PcgConfig = None, callback=None):
    """Block-worker formulation of :func:`pcg_solve` with explicit reductions."""
    cfg = cfg or PcgConfig(variant="block_parallel")
    start = time.perf_counter()
    gamma, lam = _check_inputs(S, gamma, lambda0)
    reduce = tree_reduce if cfg.deterministic_reductions else (lambda v: float(np.add.reduce(v)))
    nblocks, nb = S.N, S.nb
    trace = [] if cfg.record_trace else None
    scalars = [] if cfg.record_trace else None

    lam_b = lam.reshape(nblocks, nb)
    gamma_b = gamma.reshape(nblocks, nb)

    # initialisation: r_b, then halo load of r, r_tilde_b = p_b, eta_b
    r_b = gamma_b - _row_apply(S, lam_b)
    rt_b = _precondition_blocks(P, r_b)
    p_b = rt_b.copy()
    eta = reduce(np.einsum("bi,bi->b", r_b, rt_b))
    if eta == 0.0:
        return lam_b.reshape(-1), SolveReport(0, 0.0, True, time.perf_counter() - start, trace, scalars)

    eta_new = eta
    for it in range(1, _max_iter(cfg, S.dim) + 1):
        # halo load of p, per-block S p and partial p'Sp
        Up_b = _row_apply(S, p_b)
        upsilon = reduce(np.einsum("bi,bi->b", p_b, Up_b))
        if not upsilon > 0.0:
            raise PcgBreakdown(f"p'Sp = {upsilon:.3e} at iteration {it}; S is not positive definite")
        # barrier: every block reads the same alpha
        alpha = eta / upsilon
        lam_b = lam_b + alpha * p_b
        r_b = r_b - alpha * Up_b
        # barrier: halo load of r, then per-block preconditioning
        rt_b = _precondition_blocks(P, r_b)
        eta_new = reduce(np.einsum("bi,bi->b", r_b, rt_b))
        if not (np.isfinite(eta_new) and np.all(np.isfinite(lam_b))):
            raise PcgNonFinite(f"non-finite iterate at iteration {it}")
        if callback is not None:
            callback(it, lam_b.reshape(-1), r_b.reshape(-1))
        if trace is not None:
            trace.append(eta_new)
            scalars.append((eta, upsilon, eta_new))
        if eta_new < cfg.epsilon:
            return lam_b.reshape(-1), SolveReport(it, eta_new, True, time.perf_counter() - start, trace, scalars)
        beta = eta_new / eta
        p_b = rt_b + beta * p_b
        eta = eta_new
    return lam_b.reshape(-1), SolveReport(it, eta_new, False, time.perf_counter() - start, trace, scalars)


def solve(S, P, gamma, lambda0=None, cfg: PcgConfig = None, callback=None):
    """Dispatch on ``cfg.variant``."""
    cfg = cfg or PcgConfig()
    if cfg.variant == "block_parallel":
        return pcg_solve_block_parallel(S, P, gamma, lambda0, cfg, callback)
    return pcg_solve(S, P, gamma, lambda0, cfg, callback)
