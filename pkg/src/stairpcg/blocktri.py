"""Compressed dense storage for block-tridiagonal matrices.

Every block-row is stored contiguously as ``[left | diag | right]`` with
square ``nb x nb`` blocks. The left block of row 0 and the right block of the
last row are physically present but always zero, which keeps the kernels
branch-free.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEFT, DIAG, RIGHT = 0, 1, 2


@dataclass(frozen=True)
class BlockTriMatrix:
    """Immutable block-tridiagonal matrix.

    ``blocks`` has shape ``(N, 3, nb, nb)``; ``blocks[i, 0]`` is the block at
    ``(i, i-1)``, ``blocks[i, 1]`` at ``(i, i)`` and ``blocks[i, 2]`` at
    ``(i, i+1)``.
    """

    blocks: np.ndarray
    structurally_symmetric: bool = False

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=float)
        if blocks.ndim != 4 or blocks.shape[1] != 3 or blocks.shape[2] != blocks.shape[3]:
            raise ValueError(f"blocks must have shape (N, 3, nb, nb), got {blocks.shape}")
        if blocks.shape[0] < 1:
            raise ValueError("BlockTriMatrix needs at least one block-row")
        if np.any(blocks[0, LEFT] != 0.0) or np.any(blocks[-1, RIGHT] != 0.0):
            raise ValueError("boundary blocks (row 0 left, row N-1 right) must be zero")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    @property
    def nb(self) -> int:
        return self.blocks.shape[2]

    @property
    def dim(self) -> int:
        return self.N * self.nb

    @property
    def left(self) -> np.ndarray:
        return self.blocks[:, LEFT]

    @property
    def diag(self) -> np.ndarray:
        return self.blocks[:, DIAG]

    @property
    def right(self) -> np.ndarray:
        return self.blocks[:, RIGHT]

    @classmethod
    def from_blocks(cls, left, diag, right, structurally_symmetric=False) -> "BlockTriMatrix":
        """Stack per-row ``left``, ``diag``, ``right`` arrays of shape (N, nb, nb)."""
        diag = np.asarray(diag, dtype=float)
        left = np.array(left, dtype=float)
        right = np.array(right, dtype=float)
        left[0] = 0.0
        right[-1] = 0.0
        return cls(np.stack([left, diag, right], axis=1), structurally_symmetric)

    @classmethod
    def from_diagonal(cls, diag) -> "BlockTriMatrix":
        diag = np.asarray(diag, dtype=float)
        zeros = np.zeros_like(diag)
        return cls(np.stack([zeros, diag, zeros], axis=1), True)

    @classmethod
    def from_symmetric(cls, diag, sub) -> "BlockTriMatrix":
        """Build from diagonal blocks and sub-diagonal blocks ``sub[i] = M[i+1, i]``."""
        diag = np.asarray(diag, dtype=float)
        sub = np.asarray(sub, dtype=float).reshape(-1, *diag.shape[1:])
        left = np.zeros_like(diag)
        right = np.zeros_like(diag)
        left[1:] = sub
        right[:-1] = np.swapaxes(sub, -1, -2)
        return cls(np.stack([left, diag, right], axis=1), True)

    @classmethod
    def from_dense(cls, dense, nb: int, structurally_symmetric=False) -> "BlockTriMatrix":
        """Extract the tridiagonal blocks of a dense matrix; entries outside the band are dropped."""
        dense = np.asarray(dense, dtype=float)
        if dense.shape[0] != dense.shape[1] or dense.shape[0] % nb:
            raise ValueError(f"dense matrix {dense.shape} is not a square multiple of nb={nb}")
        N = dense.shape[0] // nb
        blocks = np.zeros((N, 3, nb, nb))
        for i in range(N):
            rows = slice(i * nb, (i + 1) * nb)
            blocks[i, DIAG] = dense[rows, i * nb:(i + 1) * nb]
            if i > 0:
                blocks[i, LEFT] = dense[rows, (i - 1) * nb:i * nb]
            if i < N - 1:
                blocks[i, RIGHT] = dense[rows, (i + 1) * nb:(i + 2) * nb]
        return cls(blocks, structurally_symmetric)

    def matvec(self, x) -> np.ndarray:
        return btri_matvec(self, x)

    def __matmul__(self, x):
        return btri_matvec(self, x)

    def to_dense(self) -> np.ndarray:
        return btri_to_dense(self)

    def with_blocks(self, blocks, structurally_symmetric=None) -> "BlockTriMatrix":
        sym = self.structurally_symmetric if structurally_symmetric is None else structurally_symmetric
        return BlockTriMatrix(blocks, sym)


def _check_length(M: BlockTriMatrix, x: np.ndarray) -> None:
    if x.shape[0] != M.dim:
        raise ValueError(
            f"dimension mismatch: expected vector of length {M.dim} (N={M.N}, nb={M.nb}), got {x.shape[0]}"
        )


def btri_matvec(M: BlockTriMatrix, x) -> np.ndarray:
    """Block-tridiagonal matrix-vector product ``y = M x``.

    Each output block only reads the input blocks ``i-1, i, i+1``.
    """
    x = np.asarray(x, dtype=float)
    _check_length(M, x)
    xb = x.reshape(M.N, M.nb, 1)
    y = M.blocks[:, DIAG] @ xb
    # boundary rows have zero off-diagonal blocks, so they can be skipped
    y[1:] += M.blocks[1:, LEFT] @ xb[:-1]
    y[:-1] += M.blocks[:-1, RIGHT] @ xb[1:]
    return y.reshape(-1)


def btri_to_dense(M: BlockTriMatrix) -> np.ndarray:
    nb, N = M.nb, M.N
    dense = np.zeros((N * nb, N * nb))
    for i in range(N):
        rows = slice(i * nb, (i + 1) * nb)
        dense[rows, i * nb:(i + 1) * nb] = M.blocks[i, DIAG]
        if i > 0:
            dense[rows, (i - 1) * nb:i * nb] = M.blocks[i, LEFT]
        if i < N - 1:
            dense[rows, (i + 1) * nb:(i + 2) * nb] = M.blocks[i, RIGHT]
    return dense


def btri_symmetrize_check(M: BlockTriMatrix) -> float:
    """Largest asymmetry of ``M`` in the infinity norm.

    Combines ``max_i ||right_i - left_{i+1}^T||`` with ``max_i ||diag_i - diag_i^T||``
    by taking the larger of the two.
    """
    diag_asym = np.abs(M.diag - np.swapaxes(M.diag, -1, -2)).max()
    if M.N == 1:
        return float(diag_asym)
    off_asym = np.abs(M.right[:-1] - np.swapaxes(M.left[1:], -1, -2)).max()
    return float(max(diag_asym, off_asym))
