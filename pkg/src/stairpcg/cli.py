"""Command line driver: ``solve-qp``, ``bench-pcg`` and ``run-nmpc``.

Exit codes: 0 ok, 2 input error, 3 solver breakdown, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import timing
from .fileio import InputError, load_nmpc_config, load_problem, result_row, write_rows
from .kktcore import LinearizationError, SingularKKTError, dense_kkt_solve, direct_kkt_solve, random_kkt
from .nmpc import fmt, run_nmpc
from .pcg import PcgConfig, PcgError, solve as pcg_solve
from .schur import SingularBlockError, build_preconditioner, build_schur, parse_preconditioner

EXIT_OK, EXIT_INPUT, EXIT_BREAKDOWN, EXIT_ORACLE = 0, 2, 3, 4
ORACLE_TOL = 1e-5
HEATMAP_HEADER = ["control_rate", "knots", "avg_sqp_iters"]

log = logging.getLogger("stairpcg")

SOLVER_FAILURES = (PcgError, SingularBlockError, SingularKKTError, LinearizationError, np.linalg.LinAlgError)


class _Exit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _precond(text):
    try:
        parse_preconditioner(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _flatten(values):
    out = []
    for v in values:
        out.extend(v if isinstance(v, list) else [v])
    return out


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _instance_seed(seed, *key):
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def cmd_solve_qp(args) -> int:
    kkt, doc = load_problem(args.problem, seed=args.seed)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    schur = build_schur(kkt)
    P = build_preconditioner(schur, args.precond)
    cfg = PcgConfig(epsilon=args.eps, max_iter=args.max_iter, variant=args.variant,
                    deterministic_reductions=args.deterministic or args.variant == "sequential")
    lam, report = pcg_solve(schur.S, P, schur.gamma, None, cfg)
    knots, nb = kkt.N + 1, kkt.n
    wall_us = (timing.modeled_pcg_time(knots, nb, report.iterations) if args.deterministic
               else report.wall_time) * 1e6
    row = result_row("solve-qp", knots, kkt.n, kkt.m, P.name, args.eps, args.variant, report.iterations,
                     report.exit_eta, report.converged, wall_us, seed)
    fh, close = _open_out(args.out)
    try:
        write_rows(fh, [row])
    finally:
        if close:
            fh.close()
    if args.oracle:
        _, lam_dense = dense_kkt_solve(kkt)
        err = float(np.abs(lam - lam_dense).max(initial=0.0))
        if err > ORACLE_TOL:
            raise _Exit(EXIT_ORACLE, f"oracle mismatch: max |lambda_pcg - lambda_dense| = {err:.3e} > {ORACLE_TOL:g}")
        log.info("oracle agreement: max |lambda_pcg - lambda_dense| = %.3e", err)
    return EXIT_OK


def cmd_bench_pcg(args) -> int:
    knots_list = _flatten(args.knots)
    precs = _flatten(args.precond)
    eps_list = _flatten(args.eps)
    n = args.state_dim
    m = args.ctrl_dim if args.ctrl_dim is not None else max(1, n // 2)
    seed = args.seed if args.seed is not None else 0
    rows = []
    for knots in knots_list:
        if knots < 1:
            raise InputError(f"--knots entries must be >= 1, got {knots}")
        print(f"knots={knots} n={n} m={m} lambda_dim={knots * n}", file=sys.stderr)
        for trial in range(args.trials):
            inst_seed = _instance_seed(seed, knots, trial)
            kkt = random_kkt(np.random.default_rng(inst_seed), knots - 1, n, m)
            schur = build_schur(kkt)
            for prec in precs:
                P = build_preconditioner(schur, prec)
                for eps in eps_list:
                    cfg = PcgConfig(epsilon=eps, max_iter=args.max_iter, variant=args.variant,
                                    deterministic_reductions=True if args.deterministic else args.variant == "sequential")
                    _, rep = pcg_solve(schur.S, P, schur.gamma, None, cfg)
                    wall_us = (timing.modeled_pcg_time(knots, n, rep.iterations) if args.deterministic
                               else rep.wall_time) * 1e6
                    rows.append(result_row("bench-pcg", knots, n, m, P.name, eps, args.variant, rep.iterations,
                                           rep.exit_eta, rep.converged, wall_us, inst_seed))
            if not args.no_baseline:
                t0 = time.perf_counter()
                _, lam = direct_kkt_solve(kkt)
                elapsed = time.perf_counter() - t0
                res = schur.gamma - schur.S.matvec(lam)
                wall_us = (timing.modeled_direct_time(knots, n, m) if args.deterministic else elapsed) * 1e6
                rows.append(result_row("bench-pcg", knots, n, m, "dense_baseline", 0.0, "direct", 1,
                                       float(res @ res), True, wall_us, inst_seed))
    fh, close = _open_out(args.out)
    try:
        write_rows(fh, rows)
    finally:
        if close:
            fh.close()
    return EXIT_OK


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_run_nmpc(args) -> int:
    model, cost, configs, grid = load_nmpc_config(args.config)
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    heat = []
    for cfg in configs:
        if args.deterministic:
            cfg.deterministic = True
        stats = run_nmpc(cfg, model, cost)
        suffix = f"_r{fmt(cfg.control_rate)}_k{cfg.N}" if grid else ""
        stats.write_steps_csv(os.path.join(out_dir, f"steps{suffix}.csv"))
        stats.write_cdf_csv(os.path.join(out_dir, f"cdf{suffix}.csv"))
        summary = stats.summary()
        summary.update(control_rate=cfg.control_rate, knots=cfg.N, deterministic=cfg.deterministic)
        _write_json(os.path.join(out_dir, f"summary{suffix}.json"), summary)
        heat.append((cfg.control_rate, cfg.N, summary["avg_sqp_iters"]))
        log.info("rate=%g knots=%d avg_sqp_iters=%.3f mean_solve_us=%.1f",
                 cfg.control_rate, cfg.N, summary["avg_sqp_iters"], summary["mean_solve_us"])
    if grid:
        with open(os.path.join(out_dir, "heatmap.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HEATMAP_HEADER)
            for rate, knots, iters in heat:
                w.writerow([fmt(rate), fmt(knots), fmt(iters)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--deterministic", action="store_true",
                        help="fixed-order reductions and modeled (virtual) timings")
    common.add_argument("--out", default=None, help="output file (solve-qp, bench-pcg) or directory (run-nmpc)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stairpcg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-qp", parents=[common], help="solve one trajectory QP through the Schur/PCG path")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("--precond", type=_precond, default="symstair",
                   help="identity | jacobi | stair | symstair | poly:<order>")
    p.add_argument("--eps", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--variant", choices=["sequential", "block_parallel"], default="sequential")
    p.add_argument("--oracle", action="store_true", help="cross-check lambda against a dense KKT solve")
    p.set_defaults(func=cmd_solve_qp)

    p = sub.add_parser("bench-pcg", parents=[common], help="benchmark PCG over random SPD trajectory instances")
    p.add_argument("--knots", type=_int_list, nargs="+", default=[[32, 64, 128, 256, 512]])
    p.add_argument("--state-dim", type=int, default=14)
    p.add_argument("--ctrl-dim", type=int, default=None)
    p.add_argument("--precond", type=_precond, nargs="+", default=["symstair"])
    p.add_argument("--eps", type=_float_list, nargs="+", default=[[1e-4]])
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--variant", choices=["sequential", "block_parallel"], default="sequential")
    p.add_argument("--no-baseline", action="store_true", help="skip the direct KKT solve rows")
    p.set_defaults(func=cmd_bench_pcg)

    p = sub.add_parser("run-nmpc", parents=[common], help="closed-loop NMPC simulation from a JSON config")
    p.add_argument("config", help="NMPC config JSON file")
    p.set_defaults(func=cmd_run_nmpc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SOLVER_FAILURES as exc:
        print(f"solver breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except RuntimeError as exc:
        # run-nmpc wraps solver failures with the control step index
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN if isinstance(exc.__cause__, SOLVER_FAILURES) else 1


if __name__ == "__main__":
    sys.exit(main())
