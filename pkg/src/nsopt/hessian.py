"""Bounded SPD metric and the damped BFGS pair-recording update."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

SPECTRAL_LO = 1e-4
SPECTRAL_HI = 1e4
POWELL_THRESHOLD = 0.2
POWELL_DAMPING = 0.8


class SpdMatrix:
    """Symmetric positive definite matrix with a cached Cholesky factor.

    ``lo`` and ``hi`` are the spectral bounds the matrix is kept within.
    """

    def __init__(self, matrix, lo=SPECTRAL_LO, hi=SPECTRAL_HI):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        if not 0 < lo <= hi:
            raise ValueError("need 0 < lo <= hi")
        self.matrix = 0.5 * (A + A.T)
        self.lo = lo
        self.hi = hi
        # raises LinAlgError if the SPD invariant is broken
        self._chol = scipy.linalg.cho_factor(self.matrix, lower=True)

    @classmethod
    def identity(cls, n, lo=SPECTRAL_LO, hi=SPECTRAL_HI):
        return cls(np.eye(n), lo, hi)

    @property
    def n(self):
        return self.matrix.shape[0]

    def solve(self, rhs):
        return scipy.linalg.cho_solve(self._chol, np.asarray(rhs, dtype=float))

    def eigvals(self):
        return np.linalg.eigvalsh(self.matrix)

    def __matmul__(self, other):
        return self.matrix @ other

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def __repr__(self):
        return f"SpdMatrix(n={self.n}, lo={self.lo:g}, hi={self.hi:g})"


def solve(H: SpdMatrix, rhs) -> np.ndarray:
    return H.solve(rhs)


def enforce_bounds(H, lo: float, hi: float) -> SpdMatrix:
    """Clamp the eigenvalues of H into [lo, hi].

    Returns H itself (as an SpdMatrix) when it is already inside the bounds.
    """
    if not 0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi")
    A = np.asarray(getattr(H, "matrix", H), dtype=float)
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    if w[0] >= lo and w[-1] <= hi:
        if isinstance(H, SpdMatrix) and H.lo == lo and H.hi == hi:
            return H
        return SpdMatrix(A, lo, hi)
    logger.debug("clamping spectrum [%.3g, %.3g] into [%.3g, %.3g]", w[0], w[-1], lo, hi)
    # V diag(w) V' is only accurate to about n*eps*max|w|; aim that far inside
    margin = 4.0 * A.shape[0] * np.finfo(float).eps * max(abs(w[0]), abs(w[-1]), hi)
    lo_t, hi_t = lo + margin, hi - margin
    if lo_t > hi_t:
        lo_t = hi_t = 0.5 * (lo + hi)
    A = (V * np.clip(w, lo_t, hi_t)) @ V.T
    return SpdMatrix(0.5 * (A + A.T), lo, hi)


def powell_damp(Hp, p, q, threshold=POWELL_THRESHOLD, damping=POWELL_DAMPING):
    """Powell's correction of the secant vector.

    If q'p < threshold * p'Hp, q is replaced by theta*q + (1 - theta)*Hp with
    theta = damping * p'Hp / (p'Hp - q'p); with the default constants this makes
    the new q'p exactly 0.2 * p'Hp.
    """
    pHp = float(p @ Hp)
    qp = float(q @ p)
    if qp >= threshold * pHp:
        return q
    theta = damping * pHp / (pHp - qp)
    return theta * q + (1.0 - theta) * Hp


def bfgs_update_powell(H: SpdMatrix, p, q, threshold=POWELL_THRESHOLD,
                       damping=POWELL_DAMPING) -> SpdMatrix:
    """Damped BFGS update H - Hpp'H/p'Hp + qq'/q'p, then spectral clamping."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    A = H.matrix
    Hp = A @ p
    pHp = float(p @ Hp)
    if not np.any(p) or pHp <= 1e-300 or not math.isfinite(pHp):
        logger.warning("skipping H update: step p is numerically zero")
        return H
    q = powell_damp(Hp, p, q, threshold, damping)
    qp = float(q @ p)
    if qp <= 0.0:
        logger.warning("skipping H update: curvature q'p = %.3g is not positive", qp)
        return H
    A = A - np.outer(Hp, Hp) / pHp + np.outer(q, q) / qp
    return enforce_bounds(0.5 * (A + A.T), H.lo, H.hi)


@dataclass
class HUpdateState:
    """Pair-recording state for the quasi-Newton metric.

    Pairs (x, G lam) are recorded whenever ||G lam|| <= sqrt(nu). Once two
    pairs exist, each new recording shifts the window (x-, v-) <- (x+, v+)
    and applies one damped BFGS update with p = x+ - x-, q = v+ - v-.
    A recording at the same x as the newest pair only refreshes v+.
    """

    H: SpdMatrix
    x_minus: np.ndarray | None = None
    v_minus: np.ndarray | None = None
    x_plus: np.ndarray | None = None
    v_plus: np.ndarray | None = None
    recorded: int = 0
    updates: int = 0
    threshold: float = POWELL_THRESHOLD
    damping: float = POWELL_DAMPING

    @classmethod
    def start(cls, n, lo=SPECTRAL_LO, hi=SPECTRAL_HI, **kw):
        return cls(SpdMatrix.identity(n, lo, hi), **kw)


def maybe_record(state: HUpdateState, x, Glambda, nu: float) -> bool:
    """Record (x, G lam) if ||G lam|| <= sqrt(nu); update H from the second pair on."""
    if nu <= 0:
        raise ValueError("certificate must be positive")
    v = np.asarray(Glambda, dtype=float)
    if np.linalg.norm(v) > math.sqrt(nu):
        return False
    if state.x_plus is not None and np.array_equal(x, state.x_plus):
        # same iterate as the newest pair: keep the fresher multiplier estimate
        state.v_plus = v.copy()
        return True
    state.x_minus, state.v_minus = state.x_plus, state.v_plus
    state.x_plus = np.array(x, dtype=float)
    state.v_plus = v.copy()
    state.recorded += 1
    if state.recorded >= 2:
        p = state.x_plus - state.x_minus
        q = state.v_plus - state.v_minus
        new_H = bfgs_update_powell(state.H, p, q, state.threshold, state.damping)
        if new_H is not state.H:
            state.updates += 1
        state.H = new_H
    return True
