"""Command line entry point: ``nsopt {gs,grafus,bench,qp-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .grafus import GrafusConfig, grafus_solver_trace, hybrid_solver_trace, run_grafus, run_hybrid
from .gs import GsConfig, gs_solver_trace, run_gs
from .oracle import FUNCTION_NAMES, make_test_function
from .qp import QpProblem, kkt_report, solve_grafus_qp
from .sampling import make_rng

logger = logging.getLogger("nsopt")


def load_configs(path):
    """Read ``{"gs": {...}, "grafus": {...}}`` overrides from a JSON file."""
    if path is None:
        return GsConfig(), GrafusConfig()
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = set(data) - {"gs", "grafus"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)} (use 'gs' and 'grafus')")
    return GsConfig.from_dict(data.get("gs", {})), GrafusConfig.from_dict(data.get("grafus", {}))


def _start_point(args, rng, n):
    if args.x0 is not None:
        x0 = np.array([float(v) for v in args.x0.split(",")])
        if x0.shape != (n,):
            raise ValueError(f"--x0 needs {n} comma-separated values")
        return x0
    return rng.uniform(-2.0, 2.0, n)


def _report(trace, oracle, out=None):
    out = out or sys.stdout
    gap = trace.f_final - oracle.known_optimum if oracle.known_optimum is not None else math.nan
    print(f"function={oracle.name} n={oracle.dim} solver={trace.solver} seed={trace.seed} "
          f"status={trace.status}", file=out)
    print(f"f_final={trace.f_final:.17g} gap={gap:.3e} iterations={len(trace.f_history)}",
          file=out)
    if trace.note:
        print(f"note: {trace.note}", file=out)


def cmd_gs(args):
    gs_cfg, _ = load_configs(args.config)
    oracle = make_test_function(args.function, args.dim)
    rng = make_rng(args.seed)
    x0 = _start_point(args, rng, args.dim)
    trace = gs_solver_trace(oracle, run_gs(oracle, gs_cfg, x0, rng), oracle.known_minimizer)
    trace.seed = args.seed
    _report(trace, oracle)
    if args.trace:
        bench.write_trace(args.trace, trace)
    return 0


def cmd_grafus(args):
    gs_cfg, gf_cfg = load_configs(args.config)
    solver = "hybrid" if args.hybrid else "grafus"
    if args.out is not None or args.seeds > 1:
        spec = bench.RunSpec(args.function, args.dim, solver, args.seeds, args.seed,
                             gs_config=gs_cfg, grafus_config=gf_cfg)
        return _batch(spec, args.out, timing=False)
    oracle = make_test_function(args.function, args.dim)
    rng = make_rng(args.seed)
    x0 = _start_point(args, rng, args.dim)
    if args.hybrid:
        trace = hybrid_solver_trace(oracle, run_hybrid(oracle, gs_cfg, gf_cfg, x0, rng))
    else:
        trace = grafus_solver_trace(oracle, run_grafus(oracle, gf_cfg, x0, rng))
    trace.seed = args.seed
    _report(trace, oracle)
    if args.trace:
        bench.write_trace(args.trace, trace)
    return 0


def _batch(spec, out, timing, workers=None):
    batch = bench.run_batch(spec, workers)
    oracle = make_test_function(spec.function, spec.dim)
    finals = [t.f_final - oracle.known_optimum for t in batch.traces]
    print(f"function={oracle.name} n={spec.dim} solver={spec.solver} "
          f"replicates={spec.replicates} seed={spec.seed} failures={len(batch.failures)}")
    if finals:
        q1, med, q3 = np.quantile(finals, [0.25, 0.5, 0.75])
        print(f"final gap: q1={q1:.3e} median={med:.3e} q3={q3:.3e}")
    if out is not None:
        paths = bench.emit_batch(batch, out, timing=timing)
        print(f"wrote {len(paths)} files to {out}")
    return 0 if batch.traces else 1


def cmd_bench(args):
    gs_cfg, gf_cfg = load_configs(args.config)
    spec = bench.RunSpec(args.function, args.dim, args.solver, args.replicates, args.seed,
                         gs_config=gs_cfg, grafus_config=gf_cfg)
    return _batch(spec, args.out, args.timing, args.workers)


def _parse_delta(v):
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity")):
        return math.inf
    return float(v)


def cmd_qp_check(args):
    data = json.loads(Path(args.problem).read_text())
    problem = QpProblem(np.asarray(data["f_tilde"], dtype=float),
                        np.asarray(data["G"], dtype=float),
                        np.asarray(data["H"], dtype=float),
                        _parse_delta(data.get("delta")))
    sol = solve_grafus_qp(problem, args.tol)
    report = kkt_report(problem, sol)
    result = {
        "status": sol.status,
        "iterations": sol.iterations,
        "d": sol.d.tolist(),
        "z": sol.z,
        "lambda": sol.lam.tolist(),
        "omega": sol.omega.tolist(),
        "kkt": {k: float(v) for k, v in vars(report).items()},
    }
    print(json.dumps(result, indent=2))
    return 0 if sol.status == "optimal" else 2


def _common(p, seed_default=0):
    p.add_argument("--function", "-f", required=True, type=str.upper, choices=FUNCTION_NAMES)
    p.add_argument("--dim", "-n", type=int, default=5)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--config", help="JSON file with 'gs' and/or 'grafus' overrides")


def build_parser():
    parser = argparse.ArgumentParser(prog="nsopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gs", help="run gradient sampling once")
    _common(p)
    p.add_argument("--x0", help="comma-separated start point (default: uniform in [-2, 2]^n)")
    p.add_argument("--trace", help="write the iteration trace CSV here")
    p.set_defaults(func=cmd_gs)

    p = sub.add_parser("grafus", help="run GraFuS (optionally after a GS warm start)")
    _common(p)
    p.add_argument("--hybrid", action="store_true", help="start with GS, switch at eps < 1e-2")
    p.add_argument("--seeds", type=int, default=1, help="number of replicates")
    p.add_argument("--out", help="directory for batch output")
    p.add_argument("--x0", help="comma-separated start point (single run only)")
    p.add_argument("--trace", help="write the iteration trace CSV here (single run only)")
    p.set_defaults(func=cmd_grafus)

    p = sub.add_parser("bench", help="replicated experiment with quartile statistics")
    _common(p, seed_default=42)
    p.add_argument("--solver", choices=bench.SOLVERS, default="hybrid")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--timing", action="store_true",
                   help="also write the wall-clock aggregate (not reproducible)")
    p.add_argument("--workers", type=int, default=None,
                   help="process count (default: $NSOPT_THREADS or 1)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("qp-check", help="solve a QP from JSON and print its KKT report")
    p.add_argument("problem", help='JSON with "f_tilde", "G", "H" and optional "delta"')
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_qp_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
