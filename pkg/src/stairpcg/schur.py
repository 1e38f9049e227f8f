"""Schur complement of the trajectory KKT system and its preconditioners.

Everything here is computed block-row by block-row: the per-knot products
are batched over knots with numpy, and the only cross-row data a
preconditioner needs is the set of diagonal-block inverses, computed once
and cached on the :class:`SchurSystem`.

Stair row parity: block-row 0 (the ``Q_0^-1`` row) is even. Even rows keep
only their diagonal block in the stair matrix, odd rows keep the full row.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocktri import DIAG, LEFT, RIGHT, BlockTriMatrix
from .kktcore import KKTSystem

# reciprocal condition number below which a block counts as singular
SINGULAR_RCOND = 1e-14

PRECONDITIONER_KINDS = ("identity", "block_jacobi", "stair", "symmetric_stair", "poly_split")
_ALIASES = {
    "identity": "identity",
    "none": "identity",
    "jacobi": "block_jacobi",
    "block_jacobi": "block_jacobi",
    "stair": "stair",
    "symstair": "symmetric_stair",
    "symmetric_stair": "symmetric_stair",
}


class SingularBlockError(np.linalg.LinAlgError):
    def __init__(self, index, what="block"):
        super().__init__(f"singular {what} at index {index}")
        self.index = index


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def invert_blocks(blocks, what="block") -> np.ndarray:
    """Invert a stack of square blocks, naming the first singular one."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.shape[0] == 0:
        return blocks.copy()
    cond = np.linalg.cond(blocks)
    bad = ~np.isfinite(cond) | (cond * SINGULAR_RCOND > 1.0)
    if np.any(bad):
        raise SingularBlockError(int(np.argmax(bad)), what)
    return np.linalg.inv(blocks)


@dataclass(frozen=True)
class SchurSystem:
    S: BlockTriMatrix
    gamma: np.ndarray
    theta_inv: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.theta_inv is None:
            object.__setattr__(self, "theta_inv", invert_blocks(self.S.diag, "diagonal block"))

    @property
    def dim(self) -> int:
        return self.S.dim

    @classmethod
    def from_matrix(cls, S: BlockTriMatrix, gamma=None) -> "SchurSystem":
        gamma = np.zeros(S.dim) if gamma is None else np.asarray(gamma, dtype=float)
        return cls(S, gamma)


def schur_terms(kkt: KKTSystem):
    """Per-knot ``(theta, phi, zeta)`` and the cost Hessian inverses."""
    Qinv = _sym(invert_blocks(kkt.Q, "state cost Hessian"))
    Rinv = _sym(invert_blocks(kkt.R, "control cost Hessian"))
    AQinv = kkt.A @ Qinv[:-1]
    BRinv = kkt.B @ Rinv
    # Q_{k+1}^-1 and q_{k+1} are the only cross-knot reads
    Qinv_next = Qinv[1:]
    q_next = kkt.q[1:]
    theta = _sym(AQinv @ np.swapaxes(kkt.A, -1, -2) + BRinv @ np.swapaxes(kkt.B, -1, -2) + Qinv_next)
    phi = -AQinv
    zeta = (
        -np.einsum("kij,kj->ki", AQinv, kkt.q[:-1])
        - np.einsum("kij,kj->ki", BRinv, kkt.r)
        + np.einsum("kij,kj->ki", Qinv_next, q_next)
    )
    return theta, phi, zeta, Qinv, Rinv


def build_schur(kkt: KKTSystem) -> SchurSystem:
    """Block-tridiagonal ``S = C G^-1 C'`` and ``gamma = -(c + C G^-1 g)``."""
    theta, phi, zeta, Qinv, _ = schur_terms(kkt)
    diag = np.concatenate([Qinv[:1], theta], axis=0)
    S = BlockTriMatrix.from_symmetric(diag, phi)
    gamma = np.empty((kkt.N + 1, kkt.n))
    gamma[0] = -((kkt.x_s - kkt.x0) + Qinv[0] @ kkt.q[0])
    gamma[1:] = kkt.e - zeta
    theta_inv = _sym(invert_blocks(diag, "Schur diagonal block"))
    return SchurSystem(S, gamma.reshape(-1), theta_inv)


@dataclass(frozen=True)
class Preconditioner:
    """An approximation ``Phi^-1`` of ``S^-1``.

    ``data`` holds ``Phi^-1`` in block-tridiagonal form (``None`` for the
    identity). The polynomial splitting variant also keeps the stair matrix
    ``psi`` and the remainder ``E = psi - S``.
    """

    kind: str
    data: BlockTriMatrix = None
    order: int = 0
    psi: BlockTriMatrix = None
    remainder: BlockTriMatrix = None

    @property
    def name(self) -> str:
        if self.kind == "poly_split":
            return f"poly:{self.order}"
        return self.kind

    def apply(self, r) -> np.ndarray:
        return apply_preconditioner(self, r)

    def to_dense(self, dim=None) -> np.ndarray:
        """Dense ``Phi^-1`` (applies the operator to the identity for polynomial kinds)."""
        if self.kind == "identity":
            return np.eye(dim)
        if self.kind == "poly_split":
            eye = np.eye(self.data.dim)
            return np.column_stack([self.apply(col) for col in eye])
        return self.data.to_dense()


def identity_preconditioner() -> Preconditioner:
    return Preconditioner("identity")


def build_block_jacobi(schur: SchurSystem) -> Preconditioner:
    return Preconditioner("block_jacobi", BlockTriMatrix.from_diagonal(schur.theta_inv))


def stair_matrix(S: BlockTriMatrix) -> BlockTriMatrix:
    """Keep full block-rows at odd indices and only the diagonal at even ones."""
    blocks = np.array(S.blocks)
    blocks[0::2, LEFT] = 0.0
    blocks[0::2, RIGHT] = 0.0
    return BlockTriMatrix(blocks)


def _stair_inverse_blocks(schur: SchurSystem) -> np.ndarray:
    S, Dinv = schur.S, schur.theta_inv
    blocks = np.zeros_like(S.blocks)
    blocks[:, DIAG] = Dinv
    odd = np.arange(1, S.N, 2)
    blocks[odd, LEFT] = -Dinv[odd] @ S.left[odd] @ Dinv[odd - 1]
    inner = odd[odd + 1 < S.N]
    blocks[inner, RIGHT] = -Dinv[inner] @ S.right[inner] @ Dinv[inner + 1]
    return blocks


def build_stair(schur: SchurSystem) -> Preconditioner:
    """Closed-form inverse of the stair part of ``S``."""
    return Preconditioner("stair", BlockTriMatrix(_stair_inverse_blocks(schur)), psi=stair_matrix(schur.S))


def build_symmetric_stair(schur: SchurSystem) -> Preconditioner:
    """Stair inverse with each odd row's off-diagonal blocks mirrored across the diagonal."""
    blocks = _stair_inverse_blocks(schur)
    N = schur.S.N
    odd = np.arange(1, N, 2)
    blocks[odd - 1, RIGHT] = np.swapaxes(blocks[odd, LEFT], -1, -2)
    inner = odd[odd + 1 < N]
    blocks[inner + 1, LEFT] = np.swapaxes(blocks[inner, RIGHT], -1, -2)
    return Preconditioner("symmetric_stair", BlockTriMatrix(blocks, structurally_symmetric=True),
                          psi=stair_matrix(schur.S))


def build_poly_split(schur: SchurSystem, order: int) -> Preconditioner:
    """Truncated splitting series ``sum_{j<=order} (psi^-1 E)^j psi^-1`` with ``S = psi - E``."""
    if order < 1:
        raise ValueError(f"poly_split order must be >= 1, got {order}")
    stair = build_stair(schur)
    remainder = BlockTriMatrix(stair.psi.blocks - schur.S.blocks)
    return Preconditioner("poly_split", stair.data, order=order, psi=stair.psi, remainder=remainder)


def apply_preconditioner(P: Preconditioner, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if P.kind == "identity":
        return r.copy()
    if r.shape[0] != P.data.dim:
        raise ValueError(f"dimension mismatch: expected vector of length {P.data.dim}, got {r.shape[0]}")
    y = P.data.matvec(r)
    if P.kind != "poly_split":
        return y
    out = y.copy()
    for _ in range(P.order):
        y = P.data.matvec(P.remainder.matvec(y))
        out += y
    return out


def parse_preconditioner(spec: str):
    """``"symstair"`` -> ``("symmetric_stair", 0)``, ``"poly:2"`` -> ``("poly_split", 2)``."""
    spec = spec.strip().lower()
    if spec.startswith("poly"):
        _, _, order = spec.partition(":")
        try:
            order = int(order) if order else 1
        except ValueError:
            raise ValueError(f"bad polynomial order in preconditioner {spec!r}") from None
        if order < 1:
            raise ValueError(f"poly_split order must be >= 1, got {order}")
        return "poly_split", order
    try:
        return _ALIASES[spec], 0
    except KeyError:
        raise ValueError(
            f"unknown preconditioner {spec!r}; expected identity, jacobi, stair, symstair or poly:<order>"
        ) from None


def build_preconditioner(schur: SchurSystem, spec) -> Preconditioner:
    kind, order = parse_preconditioner(spec) if isinstance(spec, str) else spec
    if kind == "identity":
        return identity_preconditioner()
    if kind == "block_jacobi":
        return build_block_jacobi(schur)
    if kind == "stair":
        return build_stair(schur)
    if kind == "symmetric_stair":
        return build_symmetric_stair(schur)
    return build_poly_split(schur, order)
