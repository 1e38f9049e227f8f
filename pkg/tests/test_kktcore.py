import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stairpcg.kktcore import (KKTSystem, LinearizationError, SingularKKTError, Trajectory, assemble_kkt,
                              dense_kkt_solve, direct_kkt_solve, kkt_matrices, kkt_residual, pack_primal,
                              random_kkt, reconstruct_primal, regularize, unpack_primal)
from stairpcg.models import CostModel, double_integrator, pendulum
from stairpcg.schur import build_schur


def zero_rhs_kkt(N=3, n=2, m=1):
    kkt = random_kkt(np.random.default_rng(0), N, n, m)
    return KKTSystem(kkt.Q, kkt.R, np.zeros_like(kkt.q), np.zeros_like(kkt.r), kkt.A, kkt.B,
                     np.zeros_like(kkt.e), kkt.x0.copy(), kkt.x0.copy())


def test_double_integrator_at_rest_has_no_defects():
    traj = Trajectory.constant(np.zeros(2), 5, 1, 0.01)
    kkt = assemble_kkt(traj, double_integrator(), CostModel.tracking(2, 1, 6), np.zeros(2))
    assert not kkt.e.any()
    assert not kkt.q.any()


def test_pendulum_defects_recomputed_independently():
    rng = np.random.default_rng(2)
    h = 0.05
    X = rng.uniform(-1, 1, (4, 2))
    U = rng.uniform(-1, 1, (3, 1))
    kkt = assemble_kkt(Trajectory(X, U, h), pendulum(), CostModel.tracking(2, 1, 4), X[0])
    g, ml2 = 9.81, 1.0
    for k in range(3):
        th, thd = X[k]
        f = np.array([th + h * thd, thd + h * (U[k, 0] - g * np.sin(th)) / ml2])
        np.testing.assert_allclose(kkt.e[k], X[k + 1] - f, atol=1e-15)


def test_tracking_gradient_is_offset_from_goal():
    rng = np.random.default_rng(3)
    goal = np.array([0.5, -0.25])
    X = rng.standard_normal((5, 2))
    kkt = assemble_kkt(Trajectory(X, np.zeros((4, 1)), 0.01), double_integrator(),
                       CostModel.tracking(2, 1, 5, goal=goal), X[0])
    np.testing.assert_allclose(kkt.q, X - goal)
    np.testing.assert_array_equal(kkt.Q, np.broadcast_to(np.eye(2), (5, 2, 2)))


def test_linearization_error_names_knot():
    X = np.zeros((5, 2))
    X[3, 0] = np.nan
    with pytest.raises(LinearizationError, match="knot 3"):
        assemble_kkt(Trajectory(X, np.zeros((4, 1)), 0.01), double_integrator(),
                     CostModel.tracking(2, 1, 5), np.zeros(2))


def test_regularization_adds_rho_only_when_needed():
    H = np.array([np.eye(2), np.diag([1.0, 0.0])])
    out = regularize(H)
    np.testing.assert_array_equal(out[0], np.eye(2))
    np.testing.assert_array_equal(out[1], np.diag([1.0 + 1e-6, 1e-6]))


def test_kkt_dimensions_and_block_structure():
    kkt = random_kkt(np.random.default_rng(1), 4, 3, 2)
    G, g, C, c = kkt_matrices(kkt)
    assert G.shape == (5 * 3 + 4 * 2,) * 2
    assert C.shape == (15, 23)
    assert g.shape == (23,) and c.shape == (15,)
    np.testing.assert_array_equal(C[:3, :3], np.eye(3))
    np.testing.assert_array_equal(C[3:6, :3], -kkt.A[0])
    np.testing.assert_array_equal(C[3:6, 3:5], -kkt.B[0])
    np.testing.assert_array_equal(C[3:6, 5:8], np.eye(3))


def test_dense_solve_zero_rhs():
    dz, lam = dense_kkt_solve(zero_rhs_kkt())
    assert np.abs(dz).max() == 0.0
    assert np.abs(lam).max() == 0.0


def test_dense_solve_small_residual():
    kkt = random_kkt(np.random.default_rng(5), 2, 1, 1)
    dz, lam = dense_kkt_solve(kkt)
    G, g, C, c = kkt_matrices(kkt)
    assert np.abs(G @ dz + C.T @ lam + g).max() <= 1e-10
    assert np.abs(C @ dz - c).max() <= 1e-10


def test_dense_solve_singular():
    kkt = random_kkt(np.random.default_rng(5), 2, 2, 1)
    # G = 0 leaves the controls undetermined
    bad = KKTSystem(np.zeros_like(kkt.Q), np.zeros_like(kkt.R), kkt.q, kkt.r, kkt.A, kkt.B, kkt.e, kkt.x_s, kkt.x0)
    with pytest.raises(SingularKKTError):
        dense_kkt_solve(bad)


def test_direct_solve_matches_dense():
    kkt = random_kkt(np.random.default_rng(6), 10, 3, 2)
    dz_d, lam_d = dense_kkt_solve(kkt)
    dz_s, lam_s = direct_kkt_solve(kkt)
    np.testing.assert_allclose(dz_s, dz_d, atol=1e-10)
    np.testing.assert_allclose(lam_s, lam_d, atol=1e-10)


def test_reconstruct_lambda_zero_identity_cost():
    kkt = random_kkt(np.random.default_rng(7), 3, 2, 1)
    ident = KKTSystem(np.broadcast_to(np.eye(2), kkt.Q.shape), np.broadcast_to(np.eye(1), kkt.R.shape),
                      kkt.q, kkt.r, kkt.A, kkt.B, kkt.e, kkt.x_s, kkt.x0)
    np.testing.assert_array_equal(reconstruct_primal(ident, np.zeros(8)), -ident.g)


def test_reconstruct_from_oracle_lambda():
    kkt = random_kkt(np.random.default_rng(8), 6, 3, 2)
    dz, lam = dense_kkt_solve(kkt)
    np.testing.assert_allclose(reconstruct_primal(kkt, lam), dz, atol=1e-8)


def test_reconstruct_single_knot():
    q0 = np.array([1.0])
    kkt = KKTSystem(np.eye(1)[None], np.zeros((0, 1, 1)), q0[None], np.zeros((0, 1)), np.zeros((0, 1, 1)),
                    np.zeros((0, 1, 1)), np.zeros((0, 1)), np.zeros(1), np.zeros(1))
    np.testing.assert_array_equal(reconstruct_primal(kkt, np.zeros(1)), -q0)


def test_reconstruct_blockwise_formula():
    kkt = random_kkt(np.random.default_rng(9), 3, 2, 2)
    lam = np.random.default_rng(10).standard_normal(8)
    L = lam.reshape(4, 2)
    dX, dU = unpack_primal(reconstruct_primal(kkt, lam), 3, 2, 2)
    for k in range(3):
        expected = -np.linalg.solve(kkt.Q[k], kkt.q[k] + L[k] - kkt.A[k].T @ L[k + 1])
        np.testing.assert_allclose(dX[k], expected, atol=1e-12)
        np.testing.assert_allclose(dU[k], -np.linalg.solve(kkt.R[k], kkt.r[k] - kkt.B[k].T @ L[k + 1]),
                                   atol=1e-12)
    np.testing.assert_allclose(dX[3], -np.linalg.solve(kkt.Q[3], kkt.q[3] + L[3]), atol=1e-12)


def test_reconstruct_dimension_mismatch():
    kkt = random_kkt(np.random.default_rng(0), 3, 2, 1)
    with pytest.raises(ValueError, match="expected multipliers of length 8"):
        reconstruct_primal(kkt, np.zeros(7))


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    dX, dU = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    X2, U2 = unpack_primal(pack_primal(dX, dU), 3, 3, 2)
    np.testing.assert_array_equal(X2, dX)
    np.testing.assert_array_equal(U2, dU)


def test_full_step_removes_defects_on_linear_dynamics():
    rng = np.random.default_rng(12)
    model = double_integrator()
    X = rng.standard_normal((6, 2))
    U = rng.standard_normal((5, 1))
    traj = Trajectory(X, U, 0.1)
    x_s = rng.standard_normal(2)
    kkt = assemble_kkt(traj, model, CostModel.tracking(2, 1, 6), x_s)
    dz, _ = dense_kkt_solve(kkt)
    new = traj.stepped(dz, 1.0)
    np.testing.assert_allclose(new.X[0], x_s, atol=1e-12)
    np.testing.assert_allclose(new.X[1:], model.step(new.X[:-1], new.U, 0.1), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 12), n=st.integers(1, 4), m=st.integers(1, 3))
def test_exact_schur_solution_satisfies_kkt(seed, N, n, m):
    kkt = random_kkt(np.random.default_rng(seed), N, n, m)
    schur = build_schur(kkt)
    lam = np.linalg.solve(schur.S.to_dense(), schur.gamma)
    dz = reconstruct_primal(kkt, lam)
    stat, cons = kkt_residual(kkt, dz, lam)
    assert stat <= 1e-8
    assert cons <= 1e-8
