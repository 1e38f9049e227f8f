"""Per-knot QP data, the KKT system it induces, and primal recovery.

Sign convention used throughout the package: the linearized constraints are
``C dz = c`` and the QP Lagrangian is
``0.5 dz'G dz + g'dz + lam'(C dz - c)``. With that choice

    S = C G^-1 C'           (symmetric positive definite)
    gamma = -(c + C G^-1 g)
    S lam = gamma,   dz = -G^-1 (g + C' lam)

``C`` has the block rows ``[I]`` and ``[-A_k  -B_k  I]``. The right-hand side
is ``c = [x_s - x_0, -e_0, ..., -e_{N-1}]`` with defects
``e_k = x_{k+1} - f(x_k, u_k)``, so a full step on linear dynamics removes the
defects exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .models import CostModel, DynamicsModel

REG_THRESHOLD = 1e-8
REG_RHO = 1e-6


class LinearizationError(ValueError):
    """Non-finite data produced while linearizing at a knot."""

    def __init__(self, knot, what):
        super().__init__(f"non-finite {what} at knot {knot}")
        self.knot = knot


class SingularKKTError(np.linalg.LinAlgError):
    pass


@dataclass
class Trajectory:
    """States ``X`` (N+1, n), controls ``U`` (N, m), timestep ``h`` and multipliers."""

    X: np.ndarray
    U: np.ndarray
    h: float
    lam: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        U = np.asarray(self.U, dtype=float)
        m = U.shape[-1] if U.ndim == 2 else max(U.size // max(self.X.shape[0] - 1, 1), 1)
        self.U = U.reshape(self.X.shape[0] - 1, m)
        if self.lam is None:
            self.lam = np.zeros(self.X.size)
        else:
            self.lam = np.asarray(self.lam, dtype=float)

    @property
    def N(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def knots(self) -> int:
        return self.X.shape[0]

    @classmethod
    def constant(cls, x, N, m, h):
        x = np.asarray(x, dtype=float)
        return cls(np.tile(x, (N + 1, 1)), np.zeros((N, m)), h)

    def copy(self) -> "Trajectory":
        return Trajectory(self.X.copy(), self.U.copy(), self.h, self.lam.copy())

    def stepped(self, dz, alpha) -> "Trajectory":
        dX, dU = unpack_primal(dz, self.N, self.n, self.m)
        return Trajectory(self.X + alpha * dX, self.U + alpha * dU, self.h, self.lam.copy())


def pack_primal(dX, dU) -> np.ndarray:
    """Interleave ``[x_0, u_0, x_1, u_1, ..., x_N]``."""
    dX = np.asarray(dX, dtype=float)
    dU = np.asarray(dU, dtype=float)
    N = dU.shape[0]
    body = np.concatenate([dX[:N], dU], axis=1).reshape(-1)
    return np.concatenate([body, dX[N]])


def unpack_primal(dz, N, n, m):
    dz = np.asarray(dz, dtype=float)
    expected = (N + 1) * n + N * m
    if dz.shape[0] != expected:
        raise ValueError(f"dimension mismatch: expected primal vector of length {expected}, got {dz.shape[0]}")
    body = dz[: N * (n + m)].reshape(N, n + m)
    dX = np.vstack([body[:, :n], dz[N * (n + m):][None, :]])
    return dX, body[:, n:].copy()


@dataclass(frozen=True)
class KnotData:
    Q: np.ndarray
    q: np.ndarray
    R: np.ndarray = None
    r: np.ndarray = None
    A: np.ndarray = None
    B: np.ndarray = None
    e: np.ndarray = None


@dataclass
class KKTSystem:
    """Stacked per-knot data of the trajectory QP.

    ``Q``/``q`` hold N+1 state knots; ``R``, ``r``, ``A``, ``B``, ``e`` hold N
    entries. ``x0`` is the nominal initial state and ``x_s`` the measured one.
    """

    Q: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray
    A: np.ndarray
    B: np.ndarray
    e: np.ndarray
    x_s: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "q", "r", "A", "B", "e", "x_s", "x0"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        N, n, m = self.N, self.n, self.m
        shapes = {
            "Q": (N + 1, n, n), "q": (N + 1, n), "R": (N, m, m), "r": (N, m),
            "A": (N, n, n), "B": (N, n, m), "e": (N, n), "x_s": (n,), "x0": (n,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def N(self) -> int:
        return self.Q.shape[0] - 1

    @property
    def n(self) -> int:
        return self.Q.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def primal_dim(self) -> int:
        return (self.N + 1) * self.n + self.N * self.m

    @property
    def dual_dim(self) -> int:
        return (self.N + 1) * self.n

    @property
    def c(self) -> np.ndarray:
        return np.concatenate([self.x_s - self.x0, -self.e.reshape(-1)])

    @property
    def g(self) -> np.ndarray:
        return pack_primal(self.q, self.r)

    def knot(self, k) -> KnotData:
        if k == self.N:
            return KnotData(self.Q[k], self.q[k])
        return KnotData(self.Q[k], self.q[k], self.R[k], self.r[k], self.A[k], self.B[k], self.e[k])

    @property
    def knots(self):
        return [self.knot(k) for k in range(self.N + 1)]


def regularize(H, threshold=REG_THRESHOLD, rho=REG_RHO):
    """Add ``rho I`` to every Hessian block whose smallest eigenvalue is below ``threshold``."""
    H = np.array(H, dtype=float)
    if H.size == 0:
        return H
    sym = 0.5 * (H + np.swapaxes(H, -1, -2))
    low = np.linalg.eigvalsh(sym)[..., 0] < threshold
    H[low] += rho * np.eye(H.shape[-1])
    return H


def assemble_kkt(traj: Trajectory, model: DynamicsModel, cost: CostModel, x_s) -> KKTSystem:
    """Linearize dynamics and quadratize the cost around ``traj``."""
    X, U, h = traj.X, traj.U, traj.h
    N = traj.N
    if U.shape[0] != X.shape[0] - 1:
        raise ValueError(f"trajectory needs N+1 states for N controls, got {X.shape[0]} and {U.shape[0]}")
    A, B = model.jacobians(X[:N], U, h)
    f = model.step(X[:N], U, h)
    e = X[1:] - f
    Q, R, q, r = cost.quadratics(X, U)
    parts = [("Q", Q), ("q", q), ("R", R), ("r", r), ("A", A), ("B", B), ("defect", e)]
    for what, arr in parts:
        finite = np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if not finite.all():
            raise LinearizationError(int(np.argmin(finite)), what)
    return KKTSystem(regularize(Q), regularize(R), q, r, A, B, e,
                     np.asarray(x_s, dtype=float), X[0].copy())


def random_kkt(rng: np.random.Generator, N: int, n: int, m: int) -> KKTSystem:
    """Random SPD instance: ``Q = LL' + 0.1I`` with ``L ~ U[-1, 1]``, same for ``R``;
    ``A, B ~ U[-1, 1] / n``; ``q, r, e, x_s - x_0 ~ U[-1, 1]``."""
    def spd(k, size):
        L = rng.uniform(-1.0, 1.0, size=(k, size, size))
        return L @ np.swapaxes(L, -1, -2) + 0.1 * np.eye(size)

    Q = spd(N + 1, n)
    R = spd(N, m)
    A = rng.uniform(-1.0, 1.0, size=(N, n, n)) / n
    B = rng.uniform(-1.0, 1.0, size=(N, n, m)) / n
    q = rng.uniform(-1.0, 1.0, size=(N + 1, n))
    r = rng.uniform(-1.0, 1.0, size=(N, m))
    e = rng.uniform(-1.0, 1.0, size=(N, n))
    x0 = np.zeros(n)
    x_s = rng.uniform(-1.0, 1.0, size=n)
    return KKTSystem(Q, R, q, r, A, B, e, x_s, x0)


def kkt_matrices(kkt: KKTSystem):
    """Dense ``(G, g, C, c)``."""
    N, n, m = kkt.N, kkt.n, kkt.m
    nz = kkt.primal_dim
    G = np.zeros((nz, nz))
    C = np.zeros((kkt.dual_dim, nz))
    stride = n + m
    for k in range(N + 1):
        xs = slice(k * stride, k * stride + n)
        G[xs, xs] = kkt.Q[k]
        C[k * n:(k + 1) * n, xs] = np.eye(n)
        if k < N:
            us = slice(k * stride + n, (k + 1) * stride)
            G[us, us] = kkt.R[k]
            rows = slice((k + 1) * n, (k + 2) * n)
            C[rows, xs] = -kkt.A[k]
            C[rows, us] = -kkt.B[k]
    return G, kkt.g, C, kkt.c


def kkt_sparse(kkt: KKTSystem):
    """Sparse saddle-point matrix ``[[G, C'], [C, 0]]`` and right-hand side ``[-g; c]``."""
    G, g, C, c = kkt_matrices(kkt)
    Gs = sp.csr_matrix(G)
    Cs = sp.csr_matrix(C)
    K = sp.bmat([[Gs, Cs.T], [Cs, None]], format="csc")
    return K, np.concatenate([-g, c])


def dense_kkt_solve(kkt: KKTSystem):
    """Reference solve of the full saddle-point system; returns ``(dz, lam)``."""
    G, g, C, c = kkt_matrices(kkt)
    nz = G.shape[0]
    K = np.block([[G, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
    rhs = np.concatenate([-g, c])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularKKTError(f"KKT matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularKKTError("KKT solve produced non-finite values")
    return sol[:nz], sol[nz:]


def direct_kkt_solve(kkt: KKTSystem):
    """Sparse direct factorization of the KKT system, the baseline for benchmarks."""
    K, rhs = kkt_sparse(kkt)
    sol = spla.spsolve(K, rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularKKTError("KKT solve produced non-finite values")
    nz = kkt.primal_dim
    return sol[:nz], sol[nz:]


def reconstruct_primal(kkt: KKTSystem, lam) -> np.ndarray:
    """Blockwise ``dz = -G^-1 (g + C' lam)``."""
    N, n = kkt.N, kkt.n
    lam = np.asarray(lam, dtype=float)
    if lam.shape[0] != kkt.dual_dim:
        raise ValueError(f"dimension mismatch: expected multipliers of length {kkt.dual_dim}, got {lam.shape[0]}")
    L = lam.reshape(N + 1, n)
    gx = kkt.q + L
    gx[:N] -= np.einsum("kji,kj->ki", kkt.A, L[1:])
    gu = kkt.r - np.einsum("kji,kj->ki", kkt.B, L[1:])
    dX = -np.linalg.solve(kkt.Q, gx[..., None])[..., 0]
    dU = -np.linalg.solve(kkt.R, gu[..., None])[..., 0] if N else np.zeros((0, kkt.m))
    return pack_primal(dX, dU)


def kkt_residual(kkt: KKTSystem, dz, lam):
    """Relative infinity-norm residuals ``(stationarity, constraint)``.

    Each residual is scaled by the largest of the terms it is built from.
    """
    G, g, C, c = kkt_matrices(kkt)
    Gdz, Clam, Cdz = G @ dz, C.T @ lam, C @ dz
    stat = Gdz + g + Clam
    cons = Cdz - c

    def rel(res, *terms):
        scale = max(np.abs(t).max(initial=0.0) for t in terms)
        return float(np.abs(res).max(initial=0.0) / scale) if scale > 0 else 0.0

    return rel(stat, Gdz, g, Clam), rel(cons, Cdz, c)
