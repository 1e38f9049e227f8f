"""Schur-complement PCG solvers for trajectory optimization and NMPC."""
from .blocktri import BlockTriMatrix, btri_matvec, btri_symmetrize_check, btri_to_dense
from .kktcore import (KKTSystem, KnotData, Trajectory, assemble_kkt, dense_kkt_solve, random_kkt,
                      reconstruct_primal)
from .models import CostModel, DynamicsModel, cartpole, double_integrator, eval_cost, get_model, pendulum
from .nmpc import NmpcConfig, NmpcStats, run_nmpc, shift_warm_start
from .pcg import PcgConfig, SolveReport, pcg_solve, pcg_solve_block_parallel
from .schur import (Preconditioner, SchurSystem, apply_preconditioner, build_block_jacobi, build_poly_split,
                    build_preconditioner, build_schur, build_stair, build_symmetric_stair)
from .sqp import MeritParams, SqpConfig, merit, parallel_line_search, sqp_solve

__version__ = "0.1.0"
