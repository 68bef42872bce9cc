"""Structured convex QPs used by the sampling solvers.

Two problems are handled here.

The cutting-plane trust-region subproblem::

    min_{d,z}  z + 0.5 d'Hd
    s.t.       f_tilde + G'd <= z e
               ||d||_inf <= delta

and its dual::

    max_{lam,omega}  lam'f_tilde - 0.5 (G lam + omega)' H^{-1} (G lam + omega) - delta ||omega||_1
    s.t.             e'lam = 1, lam >= 0

are solved by a primal active-set method on (d, z). The plane multipliers are
``lam`` and the box multipliers (upper minus lower) are ``omega``. With
``delta = inf`` the box rows are left out entirely.

The minimum-norm point of the convex hull of the columns of G (the gradient
sampling direction problem) is solved by Wolfe's algorithm.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
# relative distance below which a row counts as dependent on the working set
SPAN_TOL = 1e-7

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
DEGENERATE = "degenerate"


def _as_matrix(H):
    return np.asarray(getattr(H, "matrix", H), dtype=float)


@dataclass
class QpProblem:
    f_tilde: np.ndarray
    G: np.ndarray
    H: np.ndarray
    delta: float = math.inf

    def __post_init__(self):
        self.f_tilde = np.atleast_1d(np.asarray(self.f_tilde, dtype=float))
        G = np.asarray(self.G, dtype=float)
        if G.ndim == 1:
            # a bare vector is a single gradient when m == 1, else a 1-D problem
            G = G.reshape(-1, 1) if self.f_tilde.size == 1 else G.reshape(1, -1)
        self.G = G
        self.H = np.atleast_2d(_as_matrix(self.H))
        n, m = self.G.shape
        if m < 1 or self.f_tilde.shape != (m,):
            raise ValueError(f"f_tilde has shape {self.f_tilde.shape}, G has {m} columns")
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected ({n}, {n})")
        if not np.all(np.isfinite(self.f_tilde)):
            raise ValueError("f_tilde must be finite")
        if not self.delta > 0:
            raise ValueError("trust-region radius must be positive")

    @property
    def n(self):
        return self.G.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def bounded(self):
        return math.isfinite(self.delta)


@dataclass
class QpSolution:
    d: np.ndarray
    z: float
    lam: np.ndarray
    omega: np.ndarray
    status: str = OPTIMAL
    duality_gap: float = 0.0
    kkt_residual: float = 0.0
    iterations: int = 0
    # True when some box row is in the final working set, i.e. ||d||_inf == delta
    box_active: bool = False
    active: list = field(default_factory=list)


@dataclass
class KktReport:
    primal_feasibility: float
    dual_feasibility: float
    stationarity: float
    complementarity: float
    duality_gap: float
    primal_objective: float
    dual_objective: float

    def max_residual(self):
        return max(self.primal_feasibility, self.dual_feasibility, self.stationarity,
                   self.complementarity, self.duality_gap)


def primal_objective(problem: QpProblem, d, z) -> float:
    d = np.asarray(d, dtype=float)
    return float(z + 0.5 * d @ problem.H @ d)


def dual_objective(problem: QpProblem, lam, omega) -> float:
    """Dual value; -inf if omega is nonzero while the box is absent."""
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    v = problem.G @ lam + omega
    w = scipy.linalg.solve(problem.H, v, assume_a="pos")
    val = float(lam @ problem.f_tilde - 0.5 * v @ w)
    l1 = float(np.abs(omega).sum())
    if problem.bounded:
        val -= problem.delta * l1
    elif l1 > 0.0:
        return -math.inf
    return val


def kkt_report(problem: QpProblem, solution: QpSolution) -> KktReport:
    """Residuals of the optimality conditions for a candidate primal-dual pair."""
    d, z, lam, omega = solution.d, solution.z, solution.lam, solution.omega
    planes = problem.f_tilde + problem.G.T @ d - z
    primal = max(0.0, float(planes.max()))
    if problem.bounded:
        primal = max(primal, float(np.abs(d).max()) - problem.delta)
    dual = max(0.0, float(-lam.min()), abs(float(lam.sum()) - 1.0))
    if not problem.bounded:
        dual = max(dual, float(np.abs(omega).max()))
    stat = float(np.abs(problem.H @ d + problem.G @ lam + omega).max())
    comp = float(np.max(np.abs(lam * planes)))
    if problem.bounded:
        comp = max(comp, float(np.max(np.abs(problem.delta * np.abs(omega) - omega * d))))
    pobj = primal_objective(problem, d, z)
    dobj = dual_objective(problem, lam, omega)
    return KktReport(primal, dual, stat, comp, abs(pobj - dobj), pobj, dobj)


def _constraints(problem: QpProblem, shift: float):
    """Rows a_i'(d, z) <= b_i: planes, then upper box, then lower box."""
    n, m = problem.n, problem.m
    A_planes = np.hstack([problem.G.T, -np.ones((m, 1))])
    b_planes = -(problem.f_tilde - shift)
    if not problem.bounded:
        return A_planes, b_planes
    eye = np.eye(n)
    zeros = np.zeros((n, 1))
    A = np.vstack([A_planes, np.hstack([eye, zeros]), np.hstack([-eye, zeros])])
    b = np.concatenate([b_planes, np.full(2 * n, problem.delta)])
    return A, b


def _prune_planes(problem: QpProblem, tol: float) -> np.ndarray:
    """Indices of planes that are not within ``tol`` of another plane on the box.

    Plane j is dropped when some kept plane i satisfies
    f_j + g_j'd <= f_i + g_i'd + tol for every d the solution can reach. That
    region is the trust region, intersected with the box containing every
    -H^{-1} G lam, lam on the simplex. Dropped planes get a zero multiplier,
    so near-duplicate gradients never enter the working set together.
    """
    f, G = problem.f_tilde, problem.G
    reach = float(np.abs(scipy.linalg.solve(problem.H, G, assume_a="pos")).max())
    if problem.bounded:
        reach = min(reach, problem.delta)
    order = sorted(range(problem.m), key=lambda j: (-f[j], j))
    kept: list[int] = []
    for j in order:
        dominated = False
        for i in kept:
            if f[j] - f[i] + reach * float(np.abs(G[:, j] - G[:, i]).sum()) <= tol:
                dominated = True
                break
        if not dominated:
            kept.append(j)
    return np.array(sorted(kept), dtype=int)


def _in_span(A_W: np.ndarray, a: np.ndarray, rel_tol: float) -> bool:
    """True when row ``a`` lies in the span of the working rows up to ``rel_tol``.

    Such a row cannot block in exact arithmetic; adding it would leave the KKT
    matrix nearly singular and the multipliers meaningless.
    """
    if A_W.shape[0] == 0:
        return False
    coef = np.linalg.lstsq(A_W.T, a, rcond=None)[0]
    return float(np.linalg.norm(a - A_W.T @ coef)) <= rel_tol * float(np.linalg.norm(a))


def solve_grafus_qp(problem: QpProblem, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> QpSolution:
    """Solve the trust-region cutting-plane QP and recover its dual.

    Primal active-set method started from the Slater point d = 0,
    z = max(f_tilde) + 1. The working set is kept linearly independent.
    Blocking and leaving constraints are chosen by the smallest index among
    ties; after a run of zero-length steps the leaving rule switches to
    Bland's smallest-index choice to rule out cycling.
    """
    n, m_all = problem.n, problem.m
    kept = _prune_planes(problem, tol)
    if kept.size < m_all:
        logger.debug("dropped %d near-duplicate planes", m_all - kept.size)
    sub = QpProblem(problem.f_tilde[kept], problem.G[:, kept], problem.H, problem.delta)
    m = sub.m
    H = sub.H
    # work with f_tilde shifted by its max so z stays O(step) near convergence
    shift = float(sub.f_tilde.max())
    A, b = _constraints(sub, shift)
    n_rows = A.shape[0]
    if max_iter is None:
        max_iter = 50 * (m + 2 * n + 1)
    nv = n + 1
    Q = np.zeros((nv, nv))
    Q[:n, :n] = H
    c = np.zeros(nv)
    c[n] = 1.0
    row_norms = np.linalg.norm(A, axis=1)
    mult_tol = 1e-12 * (1.0 + float(np.abs(sub.G).max()))

    y = np.zeros(nv)
    y[n] = 1.0
    working: list[int] = []
    mu = {}
    status = MAX_ITER
    stalls = 0
    it = 0

    for it in range(1, max_iter + 1):
        if not any(i < m for i in working):
            # without a plane the model is unbounded below in z: slide down
            # until the highest plane is hit
            slack = b[:m] - A[:m] @ y
            j = int(np.argmin(slack))
            y[n] -= max(slack[j], 0.0)
            working.append(j)
            continue

        W = sorted(working)
        k = len(W)
        K = np.zeros((nv + k, nv + k))
        K[:nv, :nv] = Q
        K[:nv, nv:] = A[W].T
        K[nv:, :nv] = A[W]
        rhs = np.concatenate([-c, b[W]])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            status = DEGENERATE
            break
        if not np.all(np.isfinite(sol)):
            status = DEGENERATE
            break
        y_eqp, mu_w = sol[:nv], sol[nv:]
        p = y_eqp - y
        if k == nv:
            # a full-rank working set pins y to a vertex
            p[:] = 0.0

        mask = np.ones(n_rows, dtype=bool)
        mask[W] = False
        Ap = A @ p
        pnorm = float(np.linalg.norm(p))
        cand = mask & (Ap > 1e-13 * row_norms * pnorm)
        alpha, block = 1.0, -1
        if cand.any():
            idx = np.flatnonzero(cand)
            slack = np.maximum(b[idx] - A[idx] @ y, 0.0)
            steps = slack / Ap[idx]
            for j in np.lexsort((idx, steps)):
                if steps[j] >= 1.0:
                    break
                # a row in the span of the working set cannot block in exact
                # arithmetic; adding it would make the KKT matrix singular
                if not _in_span(A[W], A[idx[j]], SPAN_TOL):
                    alpha, block = float(steps[j]), int(idx[j])
                    break

        if block >= 0:
            y = y + alpha * p
            working.append(block)
            stalls = stalls + 1 if alpha * pnorm == 0.0 else 0
            continue

        # full step: y is the minimizer on the current working set
        y = y + p
        mu = dict(zip(W, mu_w))
        neg = [i for i in W if mu[i] < -mult_tol]
        if not neg:
            status = OPTIMAL
            break
        if stalls > 2 * n_rows:
            leave = min(neg)
        else:
            leave = min(neg, key=lambda i: (mu[i], i))
        working.remove(leave)

    lam_sub = np.zeros(m)
    omega = np.zeros(n)
    for i, v in mu.items():
        if i < m:
            lam_sub[i] = max(v, 0.0)
        elif i < m + n:
            omega[i - m] += max(v, 0.0)
        else:
            omega[i - m - n] -= max(v, 0.0)
    s = lam_sub.sum()
    if s > 0:
        lam_sub /= s
    else:
        lam_sub[int(np.argmax(sub.f_tilde))] = 1.0
    lam = np.zeros(m_all)
    lam[kept] = lam_sub

    d = y[:n].copy()
    z = float(np.max(sub.f_tilde + sub.G.T @ d))
    box_active = any(i >= m for i in working)
    active = sorted(int(kept[i]) if i < m else m_all + i - m for i in working)
    sol = QpSolution(d=d, z=z, lam=lam, omega=omega, status=status, iterations=it,
                     box_active=box_active, active=active)
    report = kkt_report(problem, sol)
    sol.duality_gap = report.duality_gap
    sol.kkt_residual = report.max_residual()
    if status != OPTIMAL:
        logger.warning("active-set QP ended with status %s after %d iterations "
                       "(kkt residual %.3g)", status, it, sol.kkt_residual)
    return sol


@dataclass
class GsQpResult:
    lam: np.ndarray
    g: np.ndarray
    status: str = OPTIMAL
    iterations: int = 0


def solve_gs_qp(G, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> GsQpResult:
    """Minimum-Euclidean-norm point of the convex hull of the columns of G.

    Wolfe's algorithm: a major cycle adds the column most aligned against the
    current point, minor cycles project onto the affine hull of the corral
    and step back into the simplex when some weight goes nonpositive.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    n, m = G.shape
    if m < 1:
        raise ValueError("need at least one column")
    if max_iter is None:
        max_iter = 50 * (m + n + 1)
    sq = np.einsum("ij,ij->j", G, G)
    scale = max(float(sq.max()), 1e-300)
    z1 = max(tol, 1e-14) * 1e-2

    j0 = int(np.argmin(sq))
    corral = [j0]
    weights = np.array([1.0])
    x = G[:, j0].copy()
    status = MAX_ITER
    it = 0
    while it < max_iter:
        it += 1
        dots = G.T @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= z1 * scale or j in corral:
            status = OPTIMAL
            break
        corral.append(j)
        weights = np.append(weights, 0.0)
        while it < max_iter:
            it += 1
            P = G[:, corral]
            k = len(corral)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = P.T @ P
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            alpha = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if np.all(alpha > 1e-15):
                weights = alpha
                break
            neg = alpha <= 1e-15
            ratios = weights[neg] / (weights[neg] - alpha[neg])
            theta = float(np.min(ratios))
            weights = weights + theta * (alpha - weights)
            keep = weights > 1e-15
            keep[np.flatnonzero(neg)[np.argmin(ratios)]] = False
            corral = [c for c, kp in zip(corral, keep) if kp]
            weights = weights[keep]
            weights /= weights.sum()
        x = G[:, corral] @ weights

    lam = np.zeros(m)
    lam[corral] = weights
    lam = np.maximum(lam, 0.0)
    lam /= lam.sum()
    return GsQpResult(lam=lam, g=G @ lam, status=status, iterations=it)
