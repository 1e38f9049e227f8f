import csv

import numpy as np
import pytest

from stairpcg.kktcore import Trajectory
from stairpcg.models import CostModel, double_integrator
from stairpcg.nmpc import CDF_HEADER, STEPS_HEADER, Goal, NmpcConfig, fmt, run_nmpc, shift_warm_start
from stairpcg.pcg import PcgConfig
from stairpcg.sqp import MeritParams, SqpConfig

COST = CostModel(np.diag([100.0, 1.0]), np.diag([0.01]), np.diag([1000.0, 10.0]))


def solver(**kw):
    return SqpConfig(pcg=PcgConfig(epsilon=1e-4), merit=MeritParams(mu_rule="multiplier_max"), **kw)


def short_config(goals, **kw):
    base = dict(control_rate=100.0, sim_duration=0.5, N=16, goals=goals, solver=solver(), deterministic=True)
    base.update(kw)
    return NmpcConfig(**base)


def test_shift_constant_trajectory_unchanged():
    traj = Trajectory.constant(np.array([1.0, 2.0]), 4, 1, 0.01)
    lam = np.tile([3.0, 4.0], 5)
    out, lam2 = shift_warm_start(traj, lam)
    np.testing.assert_array_equal(out.X, traj.X)
    np.testing.assert_array_equal(out.U, traj.U)
    np.testing.assert_array_equal(lam2, lam)


def test_shift_structure():
    X = np.array([[0.0], [1.0], [2.0]])
    traj = Trajectory(X, np.array([[10.0], [11.0]]), 0.1)
    out, lam = shift_warm_start(traj, np.array([5.0, 6.0, 7.0]))
    np.testing.assert_array_equal(out.X.ravel(), [1.0, 2.0, 2.0])
    np.testing.assert_array_equal(out.U.ravel(), [11.0, 11.0])
    np.testing.assert_array_equal(lam, [6.0, 7.0, 7.0])
    np.testing.assert_array_equal(out.lam, lam)


def test_shift_multiplier_blocks_follow_states():
    rng = np.random.default_rng(0)
    traj = Trajectory(rng.standard_normal((5, 3)), rng.standard_normal((4, 2)), 0.1)
    lam = rng.standard_normal(15)
    _, lam2 = shift_warm_start(traj, lam)
    L = lam.reshape(5, 3)
    np.testing.assert_array_equal(lam2.reshape(5, 3), np.vstack([L[1:], L[-1:]]))


def test_config_validation():
    g = [Goal(0.0, [0.0, 0.0])]
    with pytest.raises(ValueError):
        NmpcConfig(control_rate=0.0, goals=g)
    with pytest.raises(ValueError):
        NmpcConfig(N=1, goals=g)
    with pytest.raises(ValueError):
        NmpcConfig(goals=[])


def test_goal_schedule():
    cfg = short_config([Goal(1.0, [2.0, 0.0]), Goal(0.0, [1.0, 0.0])])
    assert cfg.goal_at(0.5)[0] == 1.0
    assert cfg.goal_at(1.0)[0] == 2.0
    assert cfg.segment_of(0.2) == 0 and cfg.segment_of(3.0) == 1


def test_goal_at_start_stays_put():
    start = np.array([0.7, 0.0])
    stats = run_nmpc(short_config([Goal(0.0, start)]), double_integrator(), COST)
    assert len(stats.records) == 50
    assert stats.column("tracking_err").max() <= 1e-9
    assert np.abs(np.array(stats.controls)).max() <= 1e-9


def test_step_goal_short_run_moves_toward_goal():
    stats = run_nmpc(short_config([Goal(0.0, [1.0, 0.0])], sim_duration=1.0, x0=np.zeros(2)),
                     double_integrator(), COST)
    err = stats.column("tracking_err")
    assert err[-1] < 0.2 * err[0]
    assert all(r.merit_monotone for r in stats.records)


def test_record_count_matches_rate_and_duration():
    stats = run_nmpc(short_config([Goal(0.0, [0.0, 0.0])], control_rate=40.0, sim_duration=0.25),
                     double_integrator(), COST)
    assert len(stats.records) == 10
    np.testing.assert_allclose(stats.column("time_s"), np.arange(10) / 40.0)


def test_csv_outputs(tmp_path):
    stats = run_nmpc(short_config([Goal(0.0, [0.3, 0.0])], x0=np.zeros(2)), double_integrator(), COST)
    stats.write_steps_csv(tmp_path / "steps.csv")
    stats.write_cdf_csv(tmp_path / "cdf.csv")
    with open(tmp_path / "steps.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == STEPS_HEADER and len(rows) == 51
    with open(tmp_path / "cdf.csv") as fh:
        cdf = list(csv.reader(fh))
    assert cdf[0] == CDF_HEADER and len(cdf) == 51
    times = np.array([float(r[0]) for r in cdf[1:]])
    frac = np.array([float(r[1]) for r in cdf[1:]])
    assert np.all(np.diff(times) >= 0) and np.all(np.diff(frac) > 0) and frac[-1] == 1.0


def test_deterministic_runs_identical():
    cfg = lambda: short_config([Goal(0.0, [1.0, 0.0]), Goal(0.25, [-1.0, 0.0])], x0=np.zeros(2))
    a = run_nmpc(cfg(), double_integrator(), COST)
    b = run_nmpc(cfg(), double_integrator(), COST)
    assert np.array_equal(np.array(a.states), np.array(b.states))
    assert np.array_equal(a.solve_times, b.solve_times)
    assert a.summary() == b.summary()


def test_summary_fields():
    stats = run_nmpc(short_config([Goal(0.0, [0.5, 0.0])], x0=np.zeros(2)), double_integrator(), COST)
    s = stats.summary()
    assert s["steps"] == 50
    assert set(s["solve_us_percentiles"]) == {"p50", "p90", "p99"}
    assert len(s["segment_final_errors"]) == 1
    assert s["merit_monotone"] is True


def test_fmt():
    assert fmt(1.0 / 3.0) == "0.333333333"
    assert fmt(7) == "7"
    assert fmt(np.float64(1e-20)) == "1e-20"
    assert fmt(True) == "true"
    assert fmt("x") == "x"
