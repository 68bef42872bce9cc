"""Nonnormalized gradient sampling with an Armijo backtracking line search."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .qp import solve_gs_qp
from .sampling import SamplingError, sample_ball, sample_in_D
from .trace import SolverTrace, TraceRow, distance

logger = logging.getLogger(__name__)

TERMINATED = "terminated"
STALLED = "stalled"
MAX_ITER = "max_iter"
HANDOVER = "handover"


@dataclass
class GsConfig:
    m: int | None = None  # None -> 2n
    nu0: float = 1e-6
    nu_opt: float = 1e-6
    eps0: float = 1e-1
    eps_opt: float = 1e-6
    theta_nu: float = 1.0
    theta_eps: float = 1e-1
    gamma: float = 0.5
    beta: float = 0.0
    max_iter: int = 10_000
    max_backtracks: int = 50
    max_perturb: int = 100
    qp_tol: float = 1e-12

    def sample_count(self, n):
        return 2 * n if self.m is None else self.m

    def validate(self, n):
        m = self.sample_count(n)
        if m < n + 1:
            raise ValueError(f"need m >= n + 1 samples, got m={m} for n={n}")
        # the published runs use nu_opt == nu0, theta_nu == 1 and beta == 0
        if not 0 <= self.nu_opt <= self.nu0:
            raise ValueError("need 0 <= nu_opt <= nu0")
        if not 0 <= self.eps_opt < self.eps0:
            raise ValueError("need 0 <= eps_opt < eps0")
        if not (0 < self.theta_nu <= 1 and 0 < self.theta_eps < 1 and 0 < self.gamma < 1):
            raise ValueError("reduction factors must lie in (0, 1)")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown GS config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GsRecord:
    k: int
    x: np.ndarray
    f: float
    g_norm: float
    eps: float
    nu: float
    t: float
    action: str  # "move", "reduce", "terminate" or "stalled"
    perturbed: bool = False


@dataclass
class GsTrace:
    records: list = field(default_factory=list)
    status: str = ""
    x: np.ndarray | None = None
    f: float = np.nan
    eps: float = np.nan
    nu: float = np.nan
    times: list = field(default_factory=list)


@dataclass
class GsStep:
    action: str
    x_next: np.ndarray
    f_next: float
    t: float
    g: np.ndarray
    lam: np.ndarray
    perturbed: bool = False


def backtracking_search(oracle, x, d, beta, gamma, max_backtracks, f_x=None):
    """Largest t in {1, gamma, gamma^2, ...} with f(x + t d) < f(x) - beta t ||d||^2.

    Returns (t, f(x + t d)), or None once ``max_backtracks`` reductions fail.
    """
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        raise ValueError("search direction must be nonzero")
    fx = oracle.eval(x) if f_x is None else f_x
    dd = float(d @ d)
    t = 1.0
    for _ in range(max_backtracks + 1):
        ft = oracle.eval(x + t * d)
        if ft < fx - beta * t * dd:
            return t, ft
        t *= gamma
    return None


def perturb_step(oracle, x, t, d, eps, rng, f_x=None, beta=0.0, max_tries=100):
    """Return a differentiable point near x + t d that keeps the descent test.

    The landing point is returned unchanged when it is already differentiable.
    Otherwise candidates are drawn from B(x + t d, min(t, eps) ||d||). Returns
    (point, f(point), perturbed) or None when ``max_tries`` candidates fail.
    """
    d = np.asarray(d, dtype=float)
    y = x + t * d
    if oracle.is_differentiable(y):
        return y, oracle.eval(y), False
    fx = oracle.eval(x) if f_x is None else f_x
    bound = fx - beta * t * float(d @ d)
    radius = min(t, eps) * float(np.linalg.norm(d))
    for _ in range(max_tries):
        c = sample_ball(y, radius, 1, rng)[0]
        if oracle.is_differentiable(c):
            fc = oracle.eval(c)
            if fc < bound:
                logger.info("perturbed nondifferentiable landing point")
                return c, fc, True
    return None


def gs_step(x, f_x, eps, nu, oracle, config: GsConfig, rng) -> GsStep:
    """Sample, find the min-norm direction and line search from x (differentiable)."""
    n = x.size
    pts = sample_in_D(oracle, x, eps, config.sample_count(n), rng)
    G = np.column_stack([oracle.grad(x)] + [oracle.grad(p) for p in pts])
    res = solve_gs_qp(G, config.qp_tol)
    g = res.g
    gnorm = float(np.linalg.norm(g))
    if gnorm <= config.nu_opt and eps <= config.eps_opt:
        return GsStep("terminate", x, f_x, 0.0, g, res.lam)
    if gnorm <= nu:
        return GsStep("reduce", x, f_x, 0.0, g, res.lam)
    d = -g
    found = backtracking_search(oracle, x, d, config.beta, config.gamma,
                                config.max_backtracks, f_x)
    if found is None:
        return GsStep("stalled", x, f_x, 0.0, g, res.lam)
    t, _ = found
    moved = perturb_step(oracle, x, t, d, eps, rng, f_x, config.beta, config.max_perturb)
    if moved is None:
        return GsStep("stalled", x, f_x, t, g, res.lam)
    x_next, f_next, perturbed = moved
    return GsStep("move", x_next, f_next, t, g, res.lam, perturbed)


def run_gs(oracle, config: GsConfig, x0, rng, handover: float | None = None) -> GsTrace:
    """Run gradient sampling from x0.

    With ``handover`` set, the run stops as soon as the sampling radius drops
    below it (status "handover") so another solver can take over.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    config.validate(n)
    if not oracle.is_differentiable(x):
        try:
            x = sample_in_D(oracle, x, config.eps0 * 1e-3, 1, rng)[0]
        except SamplingError:
            pass
    f = oracle.eval(x)
    eps, nu = config.eps0, config.nu0
    trace = GsTrace()
    start = time.perf_counter()
    trace.times.append(0.0)
    status = MAX_ITER
    for k in range(config.max_iter):
        try:
            step = gs_step(x, f, eps, nu, oracle, config, rng)
        except SamplingError as exc:
            logger.warning("GS sampling failed: %s", exc)
            status = STALLED
            break
        gnorm = float(np.linalg.norm(step.g))
        trace.records.append(GsRecord(k, x.copy(), f, gnorm, eps, nu, step.t,
                                      step.action, step.perturbed))
        if step.action == "terminate":
            status = TERMINATED
            break
        if step.action == "stalled":
            status = STALLED
            break
        if step.action == "reduce":
            eps *= config.theta_eps
            nu *= config.theta_nu
        else:
            x, f = step.x_next, step.f_next
        trace.times.append(time.perf_counter() - start)
        if handover is not None and eps < handover:
            status = HANDOVER
            break
    trace.status = status
    trace.x, trace.f, trace.eps, trace.nu = x, f, eps, nu
    return trace


def gs_solver_trace(oracle, trace: GsTrace, xstar=None) -> SolverTrace:
    """Flatten a GS trace into the common row/iterate representation."""
    out = SolverTrace(solver="gs", function=oracle.name, status=trace.status,
                      x_final=trace.x, f_final=trace.f)
    fs = [r.f for r in trace.records]
    out.f_history = list(fs)
    out.time_history = list(trace.times[: len(fs)])
    # iterate after the last record, unless the run ended without moving
    if trace.records and trace.records[-1].action not in ("terminate", "stalled"):
        out.f_history.append(trace.f)
        out.time_history.append(trace.times[-1])
    for r, f_next in zip(trace.records, out.f_history[1:] + [trace.f]):
        out.rows.append(TraceRow(
            phase="gs", k=r.k, l=0, f=r.f, nu=r.nu, eps=r.eps,
            ared=r.f - f_next if r.action == "move" else 0.0,
            accepted=r.action == "move", step_norm=r.g_norm,
            dist_to_xstar=distance(r.x, xstar)))
    return out
