"""JSON problem/config files and CSV result rows."""
from __future__ import annotations

import csv
import json

import numpy as np

from .kktcore import KKTSystem, Trajectory, assemble_kkt, random_kkt
from .models import MODELS, CostModel, get_model
from .nmpc import Goal, NmpcConfig, fmt
from .pcg import PcgConfig
from .sqp import MeritParams, SqpConfig

RESULT_HEADER = ["experiment", "N", "n", "m", "preconditioner", "epsilon", "variant", "iterations",
                 "exit_eta", "converged", "wall_time_us", "seed"]


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def _read_json(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _require(doc, key, path):
    if key not in doc:
        raise InputError(f"{path}: missing required field {key!r}")
    return doc[key]


def _array(value, shape, what):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{what}: not a numeric array") from exc
    if arr.shape != shape:
        raise InputError(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


def problem_to_dict(kkt: KKTSystem, h=0.01, seed=0) -> dict:
    """Canonical ``explicit`` problem document for ``kkt``."""
    knots = []
    for k in range(kkt.N + 1):
        d = kkt.knot(k)
        entry = {"Q": d.Q.tolist(), "q": d.q.tolist()}
        if k < kkt.N:
            entry.update(R=d.R.tolist(), r=d.r.tolist(), A=d.A.tolist(), B=d.B.tolist(), e=d.e.tolist())
        knots.append(entry)
    return {"N": kkt.N, "n": kkt.n, "m": kkt.m, "h": float(h), "model": "explicit", "seed": int(seed),
            "x_s": kkt.x_s.tolist(), "x0": kkt.x0.tolist(), "knots": knots}


def dumps_problem(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_problem(path, doc: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_problem(doc))


def parse_problem(doc, path="<problem>", seed=None):
    """Build a :class:`KKTSystem` from a problem document; returns ``(kkt, doc)``.

    ``model`` is ``"explicit"`` (per-knot arrays), ``"random"`` (generated from
    ``seed``), or a dynamics model name linearized at rest at ``x_s``.
    """
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top-level JSON value must be an object")
    try:
        N = int(_require(doc, "N", path))
        n = int(_require(doc, "n", path))
        m = int(_require(doc, "m", path))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: N, n, m must be integers") from exc
    if N < 0 or n < 1 or m < 1:
        raise InputError(f"{path}: need N >= 0, n >= 1, m >= 1")
    model = _require(doc, "model", path)
    h = float(doc.get("h", 0.01))
    if seed is None:
        seed = int(doc.get("seed", 0))

    if model == "random":
        return random_kkt(np.random.default_rng(seed), N, n, m), doc

    x_s = _array(_require(doc, "x_s", path), (n,), f"{path}: x_s")
    if model == "explicit":
        knots = _require(doc, "knots", path)
        if not isinstance(knots, list) or len(knots) != N + 1:
            raise InputError(f"{path}: 'knots' must be a list of N+1 = {N + 1} entries")
        x0 = _array(doc.get("x0", [0.0] * n), (n,), f"{path}: x0")
        Q = np.array([_array(_require(kn, "Q", path), (n, n), f"{path}: knots[{k}].Q") for k, kn in enumerate(knots)])
        q = np.array([_array(_require(kn, "q", path), (n,), f"{path}: knots[{k}].q") for k, kn in enumerate(knots)])
        body = knots[:N]

        def stack(key, shape):
            return np.array([_array(_require(kn, key, path), shape, f"{path}: knots[{k}].{key}")
                             for k, kn in enumerate(body)]).reshape((N,) + shape)

        try:
            return KKTSystem(Q, stack("R", (m, m)), q, stack("r", (m,)), stack("A", (n, n)),
                             stack("B", (n, m)), stack("e", (n,)), x_s, x0), doc
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc

    if model in MODELS:
        dyn = get_model(model)
        if (dyn.n, dyn.m) != (n, m):
            raise InputError(f"{path}: model {model!r} has n={dyn.n}, m={dyn.m}, file says n={n}, m={m}")
        goal = _array(doc.get("goal", [0.0] * n), (n,), f"{path}: goal")
        cost = CostModel.tracking(n, m, N + 1, goal=goal)
        traj = Trajectory.constant(x_s, N, m, h)
        return assemble_kkt(traj, dyn, cost, x_s), doc
    raise InputError(f"{path}: unknown model {model!r}")


def load_problem(path, seed=None):
    return parse_problem(_read_json(path), str(path), seed)


def result_row(experiment, knots, n, m, preconditioner, epsilon, variant, iterations, exit_eta, converged,
               wall_time_us, seed) -> list:
    return [fmt(v) for v in (experiment, int(knots), int(n), int(m), preconditioner, float(epsilon), variant,
                             int(iterations), float(exit_eta), bool(converged), float(wall_time_us), int(seed))]


def write_rows(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    w.writerows(rows)


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def load_nmpc_config(path):
    """Parse a run-nmpc config; returns ``(model, cost, [NmpcConfig, ...], grid)``.

    ``control_rate`` and ``knots`` may be scalars or lists; lists expand to a
    grid of runs (rate-major order).
    """
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top-level JSON value must be an object")
    try:
        model = get_model(doc.get("model", "double_integrator"))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    n, m = model.n, model.m
    weights = doc.get("weights", {})
    state_w = _array(weights.get("state", [1.0] * n), (n,), f"{path}: weights.state")
    control_w = _array(weights.get("control", [1.0] * m), (m,), f"{path}: weights.control")
    terminal_w = _array(weights.get("terminal", state_w.tolist()), (n,), f"{path}: weights.terminal")
    cost = CostModel(np.diag(state_w), np.diag(control_w), np.diag(terminal_w))

    goals = _require(doc, "goals", path)
    if not isinstance(goals, list) or not goals:
        raise InputError(f"{path}: 'goals' must be a nonempty list")
    try:
        goal_list = [Goal(float(g.get("t", 0.0)), _array(g["state"], (n,), f"{path}: goals[{i}].state"))
                     for i, g in enumerate(goals)]
    except (KeyError, AttributeError, TypeError) as exc:
        raise InputError(f"{path}: each goal needs 't' and 'state'") from exc
    x0 = _array(doc["x0"], (n,), f"{path}: x0") if "x0" in doc else None

    s = doc.get("solver", {})
    try:
        pcg = PcgConfig(epsilon=float(s.get("epsilon", 1e-4)), max_iter=s.get("max_iter"),
                        deterministic_reductions=bool(s.get("deterministic_reductions", True)),
                        variant=s.get("variant", "sequential"))
        merit = MeritParams(mu=float(s.get("mu", 10.0)), mu_rule=s.get("mu_rule", "multiplier_max"),
                            **({"alphas": s["alphas"]} if "alphas" in s else {}))
        rates = [float(r) for r in _as_list(doc.get("control_rate", 100.0))]
        knot_list = [int(k) for k in _as_list(doc.get("knots", 32))]
        configs = []
        for rate in rates:
            for knots in knot_list:
                solver = SqpConfig(max_sqp_iter=int(s.get("max_sqp_iter", 10)), pcg=pcg, merit=merit,
                                   time_budget=s.get("time_budget"),
                                   preconditioner=s.get("preconditioner", "symstair"))
                configs.append(NmpcConfig(
                    control_rate=rate, sim_duration=float(doc.get("sim_duration", 10.0)), N=knots,
                    goals=goal_list, solver=solver, sim_substeps=int(doc.get("sim_substeps", 4)),
                    h=doc.get("h"), x0=x0, warm_start=bool(doc.get("warm_start", True)),
                    deterministic=bool(doc.get("deterministic", False))))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    grid = isinstance(doc.get("control_rate"), list) or isinstance(doc.get("knots"), list)
    return model, cost, configs, grid
