"""Gradient and function sampling trust-region method (GraFuS).

Outer iterations k carry the iterate x_k, the optimality certificate nu_k and
the sampling exponent sigma_k. Inner iterations l resample m points in
B(x_k, eps_{k,l}^sigma_k), build cutting planes from their values and
gradients and solve the trust-region QP. The inner loop ends either with an
accepted step (Ared > rho * Pred) or with a certificate reduction; both then
move to x_k + d.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .gs import HANDOVER, GsConfig, GsTrace, gs_solver_trace, run_gs
from .hessian import (POWELL_DAMPING, POWELL_THRESHOLD, SPECTRAL_HI, SPECTRAL_LO,
                      HUpdateState, maybe_record)
from .qp import QpProblem, solve_grafus_qp
from .sampling import SamplingError, sample_in_D
from .trace import SolverTrace, TraceRow, distance

logger = logging.getLogger(__name__)

PROCEED = "proceed"
REJECT = "reject"
CERTIFICATE_REDUCE = "certificate_reduce"
RESOLVE_UNBOUNDED = "resolve_unbounded"

TERMINATED = "terminated"
INNER_STALL = "inner_stall"
MAX_OUTER = "max_outer"
SAMPLING_FAILED = "sampling_failed"

HANDOVER_RADIUS = 1e-2


@dataclass
class GrafusConfig:
    m: int | None = None  # None -> 2n
    nu0: float = 1e-2
    nu_opt: float = 1e-6
    sigma0: float = 1.0
    gamma_eps: float = 4.0
    gamma_delta: float = 4.0
    theta: float = 0.5
    rho: float = 1e-8
    delta_factor: float = 0.9
    varrho: float = 1.5
    # None -> 1e-3 / (n + 1)
    lambda_hash_threshold: float | None = None
    adapt_sigma: bool = True
    sigma_low: float = 1.0
    sigma_high: float = 1.5
    max_outer: int = 1000
    max_inner: int = 60
    h_lo: float = SPECTRAL_LO
    h_hi: float = SPECTRAL_HI
    powell_threshold: float = POWELL_THRESHOLD
    powell_damping: float = POWELL_DAMPING
    update_h: bool = True
    qp_tol: float | None = None

    def sample_count(self, n):
        return 2 * n if self.m is None else self.m

    def hash_threshold(self, n):
        if self.lambda_hash_threshold is None:
            return 1e-3 / (n + 1)
        return self.lambda_hash_threshold

    def qp_tolerance(self):
        if self.qp_tol is not None:
            return self.qp_tol
        return min(1e-10, self.nu_opt * 1e-3) if self.nu_opt > 0 else 1e-10

    def validate(self, n):
        m = self.sample_count(n)
        if m < n + 1:
            raise ValueError(f"need m >= n + 1 samples, got m={m} for n={n}")
        if not (self.nu0 > 0 and self.nu_opt >= 0):
            raise ValueError("need nu0 > 0 and nu_opt >= 0")
        if self.nu_opt >= self.nu0:
            logger.warning("nu_opt >= nu0: the run stops at the first certificate check")
        for name in ("theta", "rho", "delta_factor"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.varrho > 1:
            raise ValueError("varrho must exceed 1")
        if not (self.gamma_eps > 0 and self.gamma_delta > 0):
            raise ValueError("gamma_eps and gamma_delta must be positive")
        if not 1 <= self.sigma0 <= 2:
            raise ValueError("sigma0 must lie in [1, 2]")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown GraFuS config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OuterState:
    k: int
    x: np.ndarray
    f: float
    nu: float
    sigma: float
    hstate: HUpdateState


@dataclass
class InnerRecord:
    k: int
    l: int
    eps: float
    delta: float
    d: np.ndarray
    z: float
    lam: np.ndarray
    omega: np.ndarray
    step_norm: float  # ||H^{-1} G lam||
    glam_norm: float  # ||G lam||
    outcome: str
    ared: float = math.nan
    pred: float = math.nan
    accepted: bool = False
    delta_inf: bool = False
    interior_residual: float = math.nan  # ||d + H^{-1} G lam||, zero when the box is inactive
    qp_status: str = ""
    duality_gap: float = math.nan
    h_max_eig: float = math.nan
    h_min_eig: float = math.nan


@dataclass
class OuterRecord:
    k: int
    x: np.ndarray
    f: float
    nu: float
    sigma: float
    nu_next: float
    reduced: bool
    inner_count: int
    dist_to_xstar: float
    # ||G lam|| of the QP whose ||H^{-1} G lam|| fell below nu (reductions only)
    certificate_norm: float = math.nan
    h_upper: float = math.nan


@dataclass
class GrafusTrace:
    outer: list = field(default_factory=list)
    inner: list = field(default_factory=list)
    status: str = ""
    x: np.ndarray | None = None
    f: float = math.nan
    nu: float = math.nan
    times: list = field(default_factory=list)
    hstate: HUpdateState | None = None


@dataclass
class InnerResult:
    outcome: str
    record: InnerRecord
    G: np.ndarray
    f_tilde: np.ndarray
    f_trial: float = math.nan


def update_certificate(nu, step_norm, varrho=1.5, delta_factor=0.9):
    """nu' = min(max(step_norm, nu^varrho), delta_factor * nu)."""
    if nu <= 0:
        raise ValueError("certificate must be positive")
    return min(max(step_norm, nu**varrho), delta_factor * nu)


def update_sigma(lam, n, threshold=None, low=1.0, high=1.5):
    """``low`` when more than n entries of lam exceed the threshold, else ``high``.

    The count is strict (entries equal to the threshold are not counted).
    """
    if threshold is None:
        threshold = 1e-3 / (n + 1)
    count = int(np.count_nonzero(np.asarray(lam) > threshold))
    return low if count >= n + 1 else high


def sample_radius(eps, sigma):
    """eps ** sigma, computed in log space."""
    if eps <= 0:
        return 0.0
    return math.exp(sigma * math.log(eps))


def inner_iteration(state: OuterState, eps, delta, oracle, config: GrafusConfig, rng,
                    H, l=0, reuse=None) -> InnerResult:
    """Sample, solve the model QP and classify the outcome for one (k, l) pair.

    ``reuse`` is a (G, f_tilde) pair from the previous inner iteration; when
    given no new points are sampled (the delta = inf re-solve).
    """
    x = state.x
    n = x.size
    if reuse is None:
        pts = sample_in_D(oracle, x, sample_radius(eps, state.sigma),
                          config.sample_count(n), rng)
        fvals = np.array([oracle.eval(p) for p in pts])
        G = np.column_stack([oracle.grad(p) for p in pts])
        f_tilde = fvals + np.einsum("ij,ji->j", G, x - pts)
    else:
        G, f_tilde = reuse

    sol = solve_grafus_qp(QpProblem(f_tilde, G, H, delta), config.qp_tolerance())
    glam = G @ sol.lam
    h_inv_glam = H.solve(glam)
    step_norm = float(np.linalg.norm(h_inv_glam))
    d = sol.d
    interior = float(np.linalg.norm(d + h_inv_glam))
    eigs = H.eigvals()
    rec = InnerRecord(k=state.k, l=l, eps=eps, delta=delta, d=d, z=sol.z, lam=sol.lam,
                      omega=sol.omega, step_norm=step_norm,
                      glam_norm=float(np.linalg.norm(glam)), outcome="",
                      delta_inf=not math.isfinite(delta), interior_residual=interior,
                      qp_status=sol.status, duality_gap=sol.duality_gap,
                      h_min_eig=float(eigs[0]), h_max_eig=float(eigs[-1]))

    if config.update_h:
        maybe_record(state.hstate, x, glam, state.nu)

    if step_norm >= state.nu and math.isfinite(delta):
        pred = float(np.max(f_tilde) - (sol.z + 0.5 * d @ H.matrix @ d))
        f_trial = oracle.eval(x + d)
        ared = state.f - f_trial
        rec.ared, rec.pred = ared, pred
        if pred < -1e-12:
            logger.warning("nonpositive predicted reduction %.3g at k=%d l=%d",
                           pred, state.k, l)
        if ared > config.rho * pred:
            rec.outcome, rec.accepted = PROCEED, True
            return InnerResult(PROCEED, rec, G, f_tilde, f_trial)
        rec.outcome = REJECT
        return InnerResult(REJECT, rec, G, f_tilde)

    if not sol.box_active:
        rec.outcome = CERTIFICATE_REDUCE
        return InnerResult(CERTIFICATE_REDUCE, rec, G, f_tilde)
    rec.outcome = RESOLVE_UNBOUNDED
    return InnerResult(RESOLVE_UNBOUNDED, rec, G, f_tilde)


def run_grafus(oracle, config: GrafusConfig, x0, rng, hstate: HUpdateState | None = None) -> GrafusTrace:
    """Run GraFuS from x0 (which need not be a differentiable point)."""
    x = np.array(x0, dtype=float)
    n = x.size
    config.validate(n)
    if hstate is None:
        hstate = HUpdateState.start(n, config.h_lo, config.h_hi,
                                    threshold=config.powell_threshold,
                                    damping=config.powell_damping)
    xstar = oracle.known_minimizer
    state = OuterState(k=0, x=x, f=oracle.eval(x), nu=config.nu0, sigma=config.sigma0,
                       hstate=hstate)
    eps = config.gamma_eps * config.nu0
    delta = config.gamma_delta * config.nu0
    trace = GrafusTrace(hstate=hstate)
    start = time.perf_counter()
    trace.times.append(0.0)
    status = MAX_OUTER

    for k in range(config.max_outer):
        state.k = k
        # H_k stays fixed for the whole outer iteration
        H = hstate.H
        eps_kl, delta_kl = eps, delta
        reuse = None
        cert_norm = math.nan
        result = None
        l = 0
        try:
            while l < config.max_inner:
                result = inner_iteration(state, eps_kl, delta_kl, oracle, config, rng,
                                         H, l=l, reuse=reuse)
                trace.inner.append(result.record)
                if result.outcome == REJECT:
                    delta_kl *= config.theta
                    eps_kl *= config.theta
                    reuse = None
                elif result.outcome == RESOLVE_UNBOUNDED:
                    cert_norm = result.record.glam_norm
                    delta_kl = math.inf
                    reuse = (result.G, result.f_tilde)
                else:
                    break
                l += 1
            else:
                status = INNER_STALL
                break
        except SamplingError as exc:
            logger.warning("GraFuS sampling failed at k=%d: %s", k, exc)
            status = SAMPLING_FAILED
            break

        rec = result.record
        if result.outcome == CERTIFICATE_REDUCE:
            nu_next = update_certificate(state.nu, rec.step_norm, config.varrho,
                                         config.delta_factor)
            if math.isnan(cert_norm):
                cert_norm = rec.glam_norm
            sigma_next = state.sigma
            if config.adapt_sigma:
                sigma_next = update_sigma(rec.lam, n, config.hash_threshold(n),
                                          config.sigma_low, config.sigma_high)
        else:
            nu_next, sigma_next = state.nu, state.sigma
            cert_norm = math.nan

        reduced = nu_next < state.nu
        trace.outer.append(OuterRecord(
            k=k, x=state.x.copy(), f=state.f, nu=state.nu, sigma=state.sigma,
            nu_next=nu_next, reduced=reduced, inner_count=l + 1,
            dist_to_xstar=distance(state.x, xstar), certificate_norm=cert_norm,
            h_upper=float(H.eigvals()[-1])))

        if nu_next < config.nu_opt:
            status = TERMINATED
            state.nu = nu_next
            break
        state.x = state.x + rec.d
        state.f = result.f_trial if result.outcome == PROCEED else oracle.eval(state.x)
        state.nu, state.sigma = nu_next, sigma_next
        eps = config.gamma_eps * nu_next
        delta = config.gamma_delta * nu_next
        trace.times.append(time.perf_counter() - start)

    trace.status = status
    trace.x, trace.f, trace.nu = state.x, state.f, state.nu
    return trace


def ratio_vectors(trace: GrafusTrace, xstar=None):
    """Ratios nu_{k+1}/nu_k and ||x_{k+1}-x*||/||x_k-x*|| at every reduction.

    A reduction that terminates the run has no successor iterate and is left
    out of both vectors.
    """
    vec_nu, vec_x = [], []
    outer = trace.outer
    for i, rec in enumerate(outer):
        if not rec.reduced or i + 1 >= len(outer) and trace.status == TERMINATED:
            continue
        x_next = outer[i + 1].x if i + 1 < len(outer) else trace.x
        vec_nu.append(rec.nu_next / rec.nu)
        if xstar is not None:
            num = float(np.linalg.norm(x_next - xstar))
            den = float(np.linalg.norm(rec.x - xstar))
            vec_x.append(num / den if den > 0 else math.nan)
    return vec_nu, vec_x


def _grafus_rows(trace: GrafusTrace, xstar, k_offset=0):
    fs = {r.k: r.f for r in trace.outer}
    nus = {r.k: r.nu for r in trace.outer}
    xs = {r.k: r.x for r in trace.outer}
    rows = []
    for r in trace.inner:
        # an aborted outer iteration has inner records but no outer record
        f, nu, x = fs.get(r.k, trace.f), nus.get(r.k, trace.nu), xs.get(r.k, trace.x)
        rows.append(TraceRow(
            phase="grafus", k=r.k + k_offset, l=r.l, f=f, nu=nu, eps=r.eps,
            delta=r.delta, ared=r.ared, pred=r.pred, accepted=r.accepted,
            step_norm=r.step_norm, dist_to_xstar=distance(x, xstar)))
    return rows


def grafus_solver_trace(oracle, trace: GrafusTrace) -> SolverTrace:
    xstar = oracle.known_minimizer
    out = SolverTrace(solver="grafus", function=oracle.name, status=trace.status,
                      x_final=trace.x, f_final=trace.f)
    out.f_history = [r.f for r in trace.outer]
    out.time_history = list(trace.times[: len(trace.outer)])
    if trace.status != TERMINATED and trace.outer:
        out.f_history.append(trace.f)
        out.time_history.append(trace.times[-1])
    out.rows = _grafus_rows(trace, xstar)
    out.vec_nu, out.vec_xstar = ratio_vectors(trace, xstar)
    return out


@dataclass
class HybridTrace:
    gs: object
    grafus: GrafusTrace | None
    switch_index: int | None
    note: str = ""


def run_hybrid(oracle, gs_config: GsConfig, grafus_config: GrafusConfig, x0, rng,
               handover: float = HANDOVER_RADIUS) -> HybridTrace:
    """GS until its sampling radius drops below ``handover``, then GraFuS.

    If GS terminates (or stalls) first, GraFuS is skipped. If ``handover`` is
    not below the initial GS radius, GraFuS starts at x0 right away.
    """
    if handover >= gs_config.eps0:
        x = np.array(x0, dtype=float)
        gs_trace = GsTrace(status=HANDOVER, x=x, f=oracle.eval(x), eps=gs_config.eps0,
                           nu=gs_config.nu0, times=[0.0])
        return HybridTrace(gs_trace, run_grafus(oracle, grafus_config, x, rng), 0)
    gs_trace = run_gs(oracle, gs_config, x0, rng, handover=handover)
    if gs_trace.status != HANDOVER:
        return HybridTrace(gs_trace, None, None,
                           note=f"GS ended with status {gs_trace.status}; GraFuS skipped")
    grafus_trace = run_grafus(oracle, grafus_config, gs_trace.x, rng)
    # index in the combined iterate history where GraFuS starts
    switch = len(gs_trace.records) if gs_trace.records else 0
    return HybridTrace(gs_trace, grafus_trace, switch)


def hybrid_solver_trace(oracle, hybrid: HybridTrace) -> SolverTrace:
    xstar = oracle.known_minimizer
    gs_part = gs_solver_trace(oracle, hybrid.gs, xstar)
    out = SolverTrace(solver="hybrid", function=oracle.name, note=hybrid.note)
    out.rows = list(gs_part.rows)
    if hybrid.grafus is None:
        out.f_history = gs_part.f_history
        out.time_history = gs_part.time_history
        out.status = gs_part.status
        out.x_final, out.f_final = gs_part.x_final, gs_part.f_final
        return out
    gf = grafus_solver_trace(oracle, hybrid.grafus)
    # the GS end point is the GraFuS start point; keep one copy of it
    base_f = gs_part.f_history[:-1] if len(gs_part.f_history) > 1 else []
    base_t = gs_part.time_history[: len(base_f)]
    t_offset = gs_part.time_history[-1] if gs_part.time_history else 0.0
    out.switch_index = len(base_f)
    out.f_history = base_f + gf.f_history
    out.time_history = base_t + [t + t_offset for t in gf.time_history]
    k_offset = len(hybrid.gs.records)
    out.rows += _grafus_rows(hybrid.grafus, xstar, k_offset)
    out.status = gf.status
    out.x_final, out.f_final = gf.x_final, gf.f_final
    out.vec_nu, out.vec_xstar = gf.vec_nu, gf.vec_xstar
    return out
