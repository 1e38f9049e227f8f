import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stairpcg.blocktri import BlockTriMatrix, btri_matvec, btri_symmetrize_check, btri_to_dense
from stairpcg.kktcore import random_kkt
from stairpcg.schur import build_schur


def random_btri(rng, N, nb):
    blocks = rng.standard_normal((N, 3, nb, nb))
    blocks[0, 0] = 0.0
    blocks[-1, 2] = 0.0
    return BlockTriMatrix(blocks)


def scalar_btri(diag, left, right):
    return BlockTriMatrix.from_blocks(np.reshape(left, (-1, 1, 1)), np.reshape(diag, (-1, 1, 1)),
                                      np.reshape(right, (-1, 1, 1)))


def test_matvec_identity():
    M = BlockTriMatrix.from_diagonal(np.ones((3, 1, 1)))
    np.testing.assert_array_equal(btri_matvec(M, [4.0, 5.0, 6.0]), [4.0, 5.0, 6.0])


def test_matvec_hand_arithmetic():
    M = scalar_btri([2, 2], [0, 1], [1, 0])
    np.testing.assert_array_equal(M @ np.array([1.0, 1.0]), [3.0, 3.0])


def test_matvec_matches_dense_seeded():
    rng = np.random.default_rng(7)
    M = random_btri(rng, 8, 3)
    x = rng.standard_normal(M.dim)
    np.testing.assert_allclose(btri_matvec(M, x), btri_to_dense(M) @ x, rtol=0, atol=1e-12)


def test_matvec_length_mismatch_names_lengths():
    M = BlockTriMatrix.from_diagonal(np.ones((3, 2, 2)))
    with pytest.raises(ValueError, match="expected vector of length 6.*got 5"):
        btri_matvec(M, np.ones(5))


def test_to_dense_examples():
    np.testing.assert_array_equal(BlockTriMatrix.from_diagonal(np.eye(2)[None]).to_dense(), np.eye(2))
    np.testing.assert_array_equal(scalar_btri([2, 2], [0, 1], [1, 0]).to_dense(), [[2, 1], [1, 2]])


def test_dense_round_trip():
    rng = np.random.default_rng(3)
    M = random_btri(rng, 5, 2)
    dense = M.to_dense()
    np.testing.assert_array_equal(BlockTriMatrix.from_dense(dense, 2).to_dense(), dense)


def test_to_dense_zero_outside_band():
    M = random_btri(np.random.default_rng(0), 6, 2)
    D = M.to_dense()
    for i in range(6):
        for j in range(6):
            if abs(i - j) > 1:
                assert not D[2 * i:2 * i + 2, 2 * j:2 * j + 2].any()


def test_symmetrize_check_examples():
    assert btri_symmetrize_check(scalar_btri([2, 2], [0, 1], [1, 0])) == 0.0
    assert btri_symmetrize_check(scalar_btri([2, 2], [0, 0], [1, 0])) == 1.0


def test_symmetrize_check_sees_diagonal_asymmetry():
    diag = np.array([[[1.0, 2.0], [0.0, 1.0]]])
    assert btri_symmetrize_check(BlockTriMatrix.from_diagonal(diag)) == 2.0


def test_assembled_schur_is_symmetric():
    kkt = random_kkt(np.random.default_rng(11), 8, 3, 2)
    assert btri_symmetrize_check(build_schur(kkt).S) <= 1e-12


def test_boundary_blocks_rejected():
    blocks = np.zeros((2, 3, 1, 1))
    blocks[0, 0] = 1.0
    with pytest.raises(ValueError, match="boundary"):
        BlockTriMatrix(blocks)


def test_immutable():
    M = BlockTriMatrix.from_diagonal(np.ones((2, 1, 1)))
    with pytest.raises(ValueError):
        M.blocks[0, 1, 0, 0] = 3.0


def test_from_symmetric_places_transposes():
    rng = np.random.default_rng(5)
    diag = rng.standard_normal((3, 2, 2))
    diag = diag + np.swapaxes(diag, 1, 2)
    sub = rng.standard_normal((2, 2, 2))
    M = BlockTriMatrix.from_symmetric(diag, sub)
    D = M.to_dense()
    np.testing.assert_array_equal(D, D.T)
    np.testing.assert_array_equal(D[2:4, 0:2], sub[0])


@settings(max_examples=60, deadline=None)
@given(N=st.integers(1, 32), nb=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_matvec_equals_dense_property(N, nb, seed):
    rng = np.random.default_rng(seed)
    M = random_btri(rng, N, nb)
    x = rng.standard_normal(M.dim)
    dense = M.to_dense() @ x
    scale = max(1.0, np.abs(dense).max())
    assert np.abs(M @ x - dense).max() <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 12), nb=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_matvec_ignores_data_outside_rows(N, nb, seed):
    # the last row only reads x[N-2], x[N-1]; padding the input is an error, not a silent read
    rng = np.random.default_rng(seed)
    M = random_btri(rng, N, nb)
    with pytest.raises(ValueError):
        M @ rng.standard_normal(M.dim + nb)
