"""Replicated experiments: batch runs, quartile statistics and file output."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grafus import GrafusConfig, grafus_solver_trace, hybrid_solver_trace, run_grafus, run_hybrid
from .gs import GsConfig, gs_solver_trace, run_gs
from .oracle import make_test_function
from .sampling import make_rng
from .trace import TRACE_COLUMNS, SolverTrace

logger = logging.getLogger(__name__)

SOLVERS = ("gs", "grafus", "hybrid")
RATIO_LENGTH = 30
TIME_BUCKET = 0.01  # seconds


@dataclass
class RunSpec:
    function: str
    dim: int
    solver: str = "hybrid"
    replicates: int = 20
    seed: int = 42
    box: float = 2.0  # x0 ~ U[-box, box]^n
    gs_config: GsConfig = field(default_factory=GsConfig)
    grafus_config: GrafusConfig = field(default_factory=GrafusConfig)

    def validate(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.box > 0:
            raise ValueError("starting box half-width must be positive")
        make_test_function(self.function, self.dim)

    def replicate_seed(self, i):
        return self.seed + i


@dataclass
class FailureRecord:
    replicate: int
    seed: int
    error: str


@dataclass
class BatchResult:
    spec: RunSpec
    traces: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    # replicate index of each entry in ``traces``
    replicates: list = field(default_factory=list)


def run_replicate(spec: RunSpec, i: int) -> SolverTrace:
    """Run replicate i: seed base + i, x0 uniform in the box, then the solver."""
    oracle = make_test_function(spec.function, spec.dim)
    seed = spec.replicate_seed(i)
    rng = make_rng(seed)
    x0 = rng.uniform(-spec.box, spec.box, spec.dim)
    if spec.solver == "gs":
        out = gs_solver_trace(oracle, run_gs(oracle, spec.gs_config, x0, rng),
                              oracle.known_minimizer)
    elif spec.solver == "grafus":
        out = grafus_solver_trace(oracle, run_grafus(oracle, spec.grafus_config, x0, rng))
    else:
        hybrid = run_hybrid(oracle, spec.gs_config, spec.grafus_config, x0, rng)
        out = hybrid_solver_trace(oracle, hybrid)
    out.seed = seed
    return out


def _guarded(args):
    spec, i = args
    try:
        return run_replicate(spec, i), None
    except Exception as exc:  # one bad replicate must not sink the batch
        logger.error("replicate %d (seed %d) failed: %s", i, spec.replicate_seed(i), exc)
        return None, FailureRecord(i, spec.replicate_seed(i), f"{type(exc).__name__}: {exc}")


def worker_count(env=None) -> int:
    raw = (os.environ if env is None else env).get("NSOPT_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_batch(spec: RunSpec, workers: int | None = None) -> BatchResult:
    """Run every replicate of ``spec``.

    Replicates are independent (own seed, own RNG) so results do not depend on
    ``workers``, which defaults to $NSOPT_THREADS (or 1).
    """
    spec.validate()
    workers = worker_count() if workers is None else max(1, workers)
    jobs = [(spec, i) for i in range(spec.replicates)]
    if workers == 1:
        results = [_guarded(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_guarded, jobs))
    batch = BatchResult(spec)
    for i, (trace, failure) in enumerate(results):
        if failure is not None:
            batch.failures.append(failure)
        else:
            batch.traces.append(trace)
            batch.replicates.append(i)
    return batch


def best_f(traces) -> float:
    """Smallest f seen at any iterate of any trace."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    vals = [min(t.f_history) if t.f_history else t.f_final for t in traces]
    return float(np.nanmin(vals))


def build_ratio_vectors(trace: SolverTrace, target_len: int = RATIO_LENGTH):
    """Pad (or trim) the per-reduction ratio vectors to ``target_len`` entries.

    Short vectors are extended by repeating their last entry. Longer ones keep
    their last ``target_len`` entries. With no reductions both vectors are all
    NaN.
    """
    if target_len < 1:
        raise ValueError("target_len must be positive")

    def fit(v):
        v = [float(x) for x in v]
        if not v:
            return np.full(target_len, np.nan)
        if len(v) >= target_len:
            return np.array(v[-target_len:])
        return np.array(v + [v[-1]] * (target_len - len(v)))

    if not trace.vec_nu:
        logger.warning("trace (seed %s) has no certificate reductions", trace.seed)
    vec_x = trace.vec_xstar if trace.vec_xstar else []
    return fit(trace.vec_nu), fit(vec_x)


def quartiles(values, axis=0):
    """Type-7 (linear interpolation) Q1, median and Q3, ignoring NaNs."""
    q = np.nanquantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75], axis=axis,
                       method="linear")
    return q[0], q[1], q[2]


def align(series, length=None):
    """Stack sequences into a matrix, holding each at its final value."""
    series = [np.asarray(s, dtype=float) for s in series]
    if length is None:
        length = max((s.size for s in series), default=0)
    out = np.full((len(series), length), np.nan)
    for i, s in enumerate(series):
        if s.size == 0:
            continue
        n = min(s.size, length)
        out[i, :n] = s[:n]
        out[i, n:] = s[n - 1]
    return out


def ratio_column(gap) -> np.ndarray:
    """min{gap[k+1] / gap[k], 1} clipped to [0, 1]; 1 where gap[k] <= 0."""
    gap = np.asarray(gap, dtype=float)
    if gap.size < 2:
        return np.zeros(0)
    num, den = gap[1:], gap[:-1]
    out = np.ones(num.size)
    ok = den > 0
    with np.errstate(over="ignore"):  # tiny denominators give inf, clipped to 1
        out[ok] = np.clip(num[ok] / den[ok], 0.0, 1.0)
    return out


def bucket_series(times, values, bucket=TIME_BUCKET, horizon=None):
    """Value reached by each bucket edge 0, bucket, 2*bucket, ... up to horizon."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if horizon is None:
        horizon = float(times[-1]) if times.size else 0.0
    edges = np.arange(int(math.floor(horizon / bucket)) + 1) * bucket
    idx = np.searchsorted(times, edges, side="right") - 1
    return edges, np.where(idx >= 0, values[np.clip(idx, 0, None)], np.nan)


@dataclass
class AggregateStats:
    function: str
    solver: str
    f_star: float
    known_optimum: float | None
    gap_q1: np.ndarray
    gap_median: np.ndarray
    gap_q3: np.ndarray
    ratio: np.ndarray  # ratio[k] relates iterations k and k+1 of the median curve
    vec_nu: np.ndarray  # (3, target_len): Q1, median, Q3
    vec_xstar: np.ndarray
    vec_min: np.ndarray
    time_edges: np.ndarray | None = None
    time_q1: np.ndarray | None = None
    time_median: np.ndarray | None = None
    time_q3: np.ndarray | None = None

    @property
    def f_ref(self):
        """Reference value for gaps: the known optimum if there is one."""
        return self.known_optimum if self.known_optimum is not None else self.f_star


def aggregate(traces, known_optimum=None, target_len=RATIO_LENGTH, timing=False) -> AggregateStats:
    """Pointwise quartiles of f - f_ref by iteration (and optionally by time).

    f_ref is ``known_optimum`` when given, else the best f over all traces.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    f_star = best_f(traces)
    f_ref = known_optimum if known_optimum is not None else f_star
    gaps = align([np.asarray(t.f_history, dtype=float) - f_ref for t in traces])
    q1, med, q3 = quartiles(gaps)
    vecs = [build_ratio_vectors(t, target_len) for t in traces]
    nu_mat = np.array([v[0] for v in vecs])
    x_mat = np.array([v[1] for v in vecs])
    # fmin keeps the nu ratio when x* is unknown
    min_mat = np.fmin(nu_mat, x_mat)

    def quart(mat):
        if np.all(np.isnan(mat)):
            return np.full((3, target_len), np.nan)
        return np.array(quartiles(mat))

    stats = AggregateStats(
        function=traces[0].function, solver=traces[0].solver, f_star=f_star,
        known_optimum=known_optimum, gap_q1=q1, gap_median=med, gap_q3=q3,
        ratio=ratio_column(med), vec_nu=quart(nu_mat), vec_xstar=quart(x_mat),
        vec_min=quart(min_mat))
    if timing:
        horizon = max(t.time_history[-1] for t in traces if t.time_history)
        cols = []
        edges = None
        for t in traces:
            g = np.asarray(t.f_history[: len(t.time_history)], dtype=float) - f_ref
            edges, v = bucket_series(t.time_history, g, horizon=horizon)
            cols.append(v)
        stats.time_edges = edges
        stats.time_q1, stats.time_median, stats.time_q3 = quartiles(np.array(cols))
    return stats


def fmt(v) -> str:
    """17 significant digits, so a float survives a CSV round trip exactly."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows, meta=None):
    """Write a CSV; ``meta`` (e.g. the seed) goes on a leading ``# k=v`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={fmt(v)}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_meta(path):
    """The ``# k=v`` metadata line of a CSV written by write_csv, as strings."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        return {}
    return dict(item.split("=", 1) for item in first[1:].split())


def read_csv(path):
    """Header plus rows as floats (empty cells become NaN, text is kept)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    header, body = rows[0], rows[1:]

    def conv(s):
        if s == "":
            return math.nan
        try:
            return float(s)
        except ValueError:
            return s

    return header, [[conv(s) for s in r] for r in body]


def write_trace(path, trace: SolverTrace):
    meta = {"function": trace.function, "solver": trace.solver, "seed": trace.seed,
            "status": trace.status}
    return write_csv(path, TRACE_COLUMNS, (r.as_tuple() for r in trace.rows), meta)


AGGREGATE_HEADER = ("iteration", "gap_q1", "gap_median", "gap_q3", "ratio")
RATIO_HEADER = ("position", "vec_nu_q1", "vec_nu_median", "vec_nu_q3",
                "vec_xstar_q1", "vec_xstar_median", "vec_xstar_q3",
                "vec_min_q1", "vec_min_median", "vec_min_q3")
TIME_HEADER = ("seconds", "gap_q1", "gap_median", "gap_q3")
RUNS_HEADER = ("replicate", "seed", "status", "f_final", "f_ref", "gap_final",
               "iterations", "switch_index", "reductions", "note")

PLOT_SCRIPT = '''"""Plot the benchmark CSVs written next to this script (needs matplotlib)."""
import csv
import math
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent


def load(name):
    with open(HERE / name, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    cols = {{h: [] for h in rows[0]}}
    for r in rows[1:]:
        for h, v in zip(rows[0], r):
            cols[h].append(float(v) if v else math.nan)
    return cols


def positive(v):
    return [x if x > 0 else math.nan for x in v]


agg = load("{aggregate}")
fig, ax = plt.subplots(1, 2, figsize=(11, 4))
it = agg["iteration"]
ax[0].fill_between(it, positive(agg["gap_q1"]), positive(agg["gap_q3"]), alpha=0.3)
ax[0].plot(it, positive(agg["gap_median"]), color="black", lw=1)
# ratio column drawn as a color series along the median curve (bright = near 0)
sc = ax[0].scatter(it[1:], positive(agg["gap_median"][1:]), c=agg["ratio"][:-1],
                   cmap="viridis_r", vmin=0, vmax=1, marker="D", s=14)
fig.colorbar(sc, ax=ax[0], label="ratio")
ax[0].set_yscale("log")
ax[0].set_xlabel("iteration")
ax[0].set_ylabel("f - f*")
ax[0].set_title("{title}")

vec = load("{ratios}")
for key, color in (("vec_nu", "tab:blue"), ("vec_xstar", "tab:orange")):
    ax[1].fill_between(vec["position"], positive(vec[key + "_q1"]),
                       positive(vec[key + "_q3"]), alpha=0.25, color=color)
    ax[1].plot(vec["position"], positive(vec[key + "_median"]), color=color, label=key)
ax[1].set_yscale("log")
ax[1].set_xlabel("reduction")
ax[1].legend()
{timing}
fig.tight_layout()
fig.savefig(HERE / "{figure}", dpi=150)
'''

TIME_PLOT = '''
tim = load("{name}")
fig2, ax2 = plt.subplots(figsize=(5.5, 4))
ax2.fill_between(tim["seconds"], positive(tim["gap_q1"]), positive(tim["gap_q3"]), alpha=0.3)
ax2.plot(tim["seconds"], positive(tim["gap_median"]), color="black", lw=1)
ax2.set_yscale("log")
ax2.set_xlabel("seconds")
ax2.set_ylabel("f - f*")
fig2.tight_layout()
fig2.savefig(HERE / "{figure}", dpi=150)
'''


def emit(stats: AggregateStats | None, out_dir, fmt_kind: str = "csv", prefix: str = "aggregate",
         meta=None):
    """Write aggregate statistics as CSVs (``csv``) or as a plot script (``plot-script``).

    ``stats=None`` writes header-only CSVs. ``meta`` is recorded on the first
    line of every CSV. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {"aggregate": f"{prefix}_iter.csv", "ratios": f"{prefix}_ratio_vectors.csv",
             "time": f"{prefix}_time.csv"}
    if fmt_kind == "plot-script":
        timing = ""
        if stats is not None and stats.time_edges is not None:
            timing = TIME_PLOT.format(name=names["time"], figure=f"{prefix}_time.png")
        title = "" if stats is None else f"{stats.function} {stats.solver}"
        script = PLOT_SCRIPT.format(aggregate=names["aggregate"], ratios=names["ratios"],
                                    timing=timing, title=title, figure=f"{prefix}.png")
        path = out / f"plot_{prefix}.py"
        path.write_text(script)
        return [path]
    if fmt_kind != "csv":
        raise ValueError(f"unknown format {fmt_kind!r}")
    paths = []
    if stats is None:
        paths.append(write_csv(out / names["aggregate"], AGGREGATE_HEADER, [], meta))
        paths.append(write_csv(out / names["ratios"], RATIO_HEADER, [], meta))
        return paths
    L = stats.gap_median.size
    ratio = list(stats.ratio) + [None]
    rows = ((k, stats.gap_q1[k], stats.gap_median[k], stats.gap_q3[k], ratio[k])
            for k in range(L))
    paths.append(write_csv(out / names["aggregate"], AGGREGATE_HEADER, rows, meta))
    T = stats.vec_nu.shape[1]
    rows = ((i + 1, *stats.vec_nu[:, i], *stats.vec_xstar[:, i], *stats.vec_min[:, i])
            for i in range(T))
    paths.append(write_csv(out / names["ratios"], RATIO_HEADER, rows, meta))
    if stats.time_edges is not None:
        rows = zip(stats.time_edges, stats.time_q1, stats.time_median, stats.time_q3)
        paths.append(write_csv(out / names["time"], TIME_HEADER, rows, meta))
    return paths


def emit_batch(batch: BatchResult, out_dir, timing=False):
    """Per-replicate traces, a run summary, aggregates and the plot script."""
    out = Path(out_dir)
    spec = batch.spec
    oracle = make_test_function(spec.function, spec.dim)
    paths = []
    summary = []
    stats = None
    if batch.traces:
        stats = aggregate(batch.traces, oracle.known_optimum, timing=timing)
    f_ref = stats.f_ref if stats is not None else math.nan
    for i, t in zip(batch.replicates, batch.traces):
        paths.append(write_trace(out / f"trace_{i:03d}_seed{t.seed}.csv", t))
        summary.append((i, t.seed, t.status, t.f_final, f_ref, t.f_final - f_ref,
                        len(t.f_history), t.switch_index, len(t.vec_nu), t.note))
    for fl in batch.failures:
        summary.append((fl.replicate, fl.seed, "failed", None, f_ref, None, 0, None, 0, fl.error))
    summary.sort(key=lambda r: r[0])
    meta = {"function": oracle.name, "dim": spec.dim, "solver": spec.solver,
            "replicates": spec.replicates, "seed": spec.seed}
    paths.append(write_csv(out / "runs.csv", RUNS_HEADER, summary, meta))
    ref = [] if stats is None else [(stats.f_star, stats.known_optimum, stats.f_ref)]
    paths.append(write_csv(out / "reference.csv", ("best_f", "known_optimum", "f_ref"), ref,
                           meta))
    paths += emit(stats, out, "csv", meta=meta)
    paths += emit(stats, out, "plot-script")
    return paths
