"""Gradient sampling and gradient-and-function sampling for nonsmooth minimization."""

from .bench import AggregateStats, RunSpec, aggregate, best_f, build_ratio_vectors, emit, run_batch
from .grafus import (GrafusConfig, inner_iteration, run_grafus, run_hybrid, update_certificate,
                     update_sigma)
from .gs import GsConfig, run_gs
from .hessian import HUpdateState, SpdMatrix, bfgs_update_powell, enforce_bounds, maybe_record
from .oracle import ObjectiveOracle, finite_difference_check, is_differentiable, make_test_function
from .qp import QpProblem, QpSolution, kkt_report, solve_grafus_qp, solve_gs_qp
from .sampling import make_rng, sample_ball, sample_in_D

__all__ = [
    "AggregateStats", "GrafusConfig", "GsConfig", "HUpdateState", "ObjectiveOracle",
    "QpProblem", "QpSolution", "RunSpec", "SpdMatrix", "aggregate", "best_f",
    "bfgs_update_powell", "build_ratio_vectors", "emit", "enforce_bounds",
    "finite_difference_check", "inner_iteration", "is_differentiable", "kkt_report",
    "make_rng", "make_test_function", "maybe_record", "run_batch", "run_grafus", "run_gs",
    "run_hybrid", "sample_ball", "sample_in_D", "solve_grafus_qp", "solve_gs_qp",
    "update_certificate", "update_sigma",
]
__version__ = "0.1.0"
