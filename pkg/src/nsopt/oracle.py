"""Objective oracles for max-type nonsmooth functions.

Each oracle evaluates f(x) and, on the full-measure set where f is smooth,
its gradient. Oracles also expose the values of their max-branches so tests
can inspect which pieces are active; the solvers only ever call ``eval`` and
``grad``.

Test functions:

    F1  chained CB3 I
    F2  chained CB3 II
    F3  nonsmooth generalization of Brown function 2
    F4  chained crescent I
    ABS |x| = max(x, -x) in one dimension
    QUAD  0.5 * ||x||^2, a smooth sanity check
"""

from __future__ import annotations

import numpy as np

TIE_TOLERANCE = 1e-12
# below this |x_i| the ln|x_i| factor in the F3 gradient is treated as zero
_F3_LOG_FLOOR = 1e-300


class NonDifferentiableError(ValueError):
    """Raised when a gradient-based check is requested at a kink."""


class ObjectiveOracle:
    """Base class for objective oracles.

    Subclasses implement ``eval``, ``grad`` and ``branches``. ``branches``
    returns a 2-D array of shape (groups, pieces): f is the sum over groups of
    the max over pieces within each group. Differentiability is decided by
    looking for near-ties between the two largest pieces of any group.
    """

    name = "base"

    def __init__(self, dim, known_minimizer=None, known_optimum=None,
                 tie_tolerance=TIE_TOLERANCE):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.known_minimizer = (None if known_minimizer is None
                                else np.asarray(known_minimizer, dtype=float))
        self.known_optimum = known_optimum
        self.tie_tolerance = tie_tolerance

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of shape ({self.dim},), got {x.shape}")
        return x

    def eval(self, x) -> float:
        return float(np.sum(np.max(self.branches(x), axis=1)))

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def branches(self, x) -> np.ndarray:
        raise NotImplementedError

    def value_and_grad(self, x):
        return self.eval(x), self.grad(x)

    def is_differentiable(self, x) -> bool:
        x = self._check(x)
        br = self.branches(x)
        if br.shape[1] < 2:
            return True
        tol = self.tie_tolerance * (abs(self.eval(x)) + 1.0)
        top2 = np.sort(br, axis=1)[:, -2:]
        return bool(np.all(top2[:, 1] - top2[:, 0] > tol))


class ChainedCB3I(ObjectiveOracle):
    """sum_i max{x_i^4 + x_{i+1}^2, (2-x_i)^2 + (2-x_{i+1})^2, 2 exp(x_{i+1} - x_i)}"""

    name = "F1"

    def branches(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        return np.column_stack([
            a**4 + b**2,
            (2.0 - a) ** 2 + (2.0 - b) ** 2,
            2.0 * np.exp(-a + b),
        ])

    def grad(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        idx = np.argmax(self.branches(x), axis=1)
        e = 2.0 * np.exp(-a + b)
        da = np.select([idx == 0, idx == 1], [4.0 * a**3, -2.0 * (2.0 - a)], -e)
        db = np.select([idx == 0, idx == 1], [2.0 * b, -2.0 * (2.0 - b)], e)
        g = np.zeros(self.dim)
        g[:-1] += da
        g[1:] += db
        return g


class ChainedCB3II(ObjectiveOracle):
    """max of the three chained CB3 sums."""

    name = "F2"

    def branches(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        return np.array([[
            np.sum(a**4 + b**2),
            np.sum((2.0 - a) ** 2 + (2.0 - b) ** 2),
            np.sum(2.0 * np.exp(-a + b)),
        ]])

    def grad(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        idx = int(np.argmax(self.branches(x)[0]))
        g = np.zeros(self.dim)
        if idx == 0:
            g[:-1] += 4.0 * a**3
            g[1:] += 2.0 * b
        elif idx == 1:
            g[:-1] += -2.0 * (2.0 - a)
            g[1:] += -2.0 * (2.0 - b)
        else:
            e = 2.0 * np.exp(-a + b)
            g[:-1] -= e
            g[1:] += e
        return g


class NonsmoothBrown2(ObjectiveOracle):
    """sum_i |x_i|^(x_{i+1}^2 + 1) + |x_{i+1}|^(x_i^2 + 1)

    The nonsmoothness comes from |.|, so a point is treated as a kink when any
    coordinate is (numerically) zero. ``branches`` reports one group per
    coordinate with pieces (x_i, -x_i), which captures exactly that.
    """

    name = "F3"

    def eval(self, x):
        x = self._check(x)
        ax = np.abs(x)
        a, b = ax[:-1], ax[1:]
        with np.errstate(over="ignore"):
            return float(np.sum(a ** (x[1:] ** 2 + 1.0) + b ** (x[:-1] ** 2 + 1.0)))

    def branches(self, x):
        x = self._check(x)
        return np.column_stack([x, -x])

    def is_differentiable(self, x):
        x = self._check(x)
        return bool(np.all(np.abs(x) > self.tie_tolerance))

    @staticmethod
    def _pair_grad(u, v):
        """Partials of |u|^(v^2+1) with respect to u and v."""
        au = np.abs(u)
        du = np.sign(u) * (v**2 + 1.0) * au ** (v**2)
        safe = np.where(au < _F3_LOG_FLOOR, 1.0, au)
        log_u = np.where(au < _F3_LOG_FLOOR, 0.0, np.log(safe))
        dv = 2.0 * v * au ** (v**2 + 1.0) * log_u
        return du, dv

    def grad(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        g = np.zeros(self.dim)
        # |x_i|^(x_{i+1}^2 + 1)
        da, db = self._pair_grad(a, b)
        g[:-1] += da
        g[1:] += db
        # |x_{i+1}|^(x_i^2 + 1)
        db, da = self._pair_grad(b, a)
        g[:-1] += da
        g[1:] += db
        return g


class ChainedCrescentI(ObjectiveOracle):
    """max of the two chained crescent sums."""

    name = "F4"

    def branches(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        return np.array([[
            np.sum(a**2 + (b - 1.0) ** 2 + b - 1.0),
            np.sum(-(a**2) - (b - 1.0) ** 2 + b + 1.0),
        ]])

    def grad(self, x):
        x = self._check(x)
        a, b = x[:-1], x[1:]
        g = np.zeros(self.dim)
        if np.argmax(self.branches(x)[0]) == 0:
            g[:-1] += 2.0 * a
            g[1:] += 2.0 * (b - 1.0) + 1.0
        else:
            g[:-1] -= 2.0 * a
            g[1:] += -2.0 * (b - 1.0) + 1.0
        return g


class AbsoluteValue(ObjectiveOracle):
    name = "ABS"

    def branches(self, x):
        x = self._check(x)
        return np.array([[x[0], -x[0]]])

    def grad(self, x):
        x = self._check(x)
        return np.array([1.0 if x[0] >= 0.0 else -1.0])


class HalfSquaredNorm(ObjectiveOracle):
    name = "QUAD"

    def eval(self, x):
        x = self._check(x)
        return 0.5 * float(x @ x)

    def branches(self, x):
        return np.array([[self.eval(x)]])

    def grad(self, x):
        return self._check(x).copy()


_CHAINED = {
    "F1": (ChainedCB3I, 1.0),
    "F2": (ChainedCB3II, 1.0),
    "F3": (NonsmoothBrown2, 0.0),
    "F4": (ChainedCrescentI, 0.0),
}

FUNCTION_NAMES = ("F1", "F2", "F3", "F4", "ABS", "QUAD")


def make_test_function(name: str, n: int, tie_tolerance: float = TIE_TOLERANCE) -> ObjectiveOracle:
    """Build one of the named test oracles in dimension ``n``.

    The chained functions need n >= 2 and ABS is one-dimensional. The
    returned oracle carries its known minimizer and optimal value.
    """
    key = name.upper()
    if key in _CHAINED:
        if n < 2:
            raise ValueError(f"{key} needs n >= 2, got {n}")
        cls, xstar_value = _CHAINED[key]
        oracle = cls(n, tie_tolerance=tie_tolerance)
        oracle.known_minimizer = np.full(n, xstar_value)
        oracle.known_optimum = oracle.eval(oracle.known_minimizer)
        return oracle
    if key == "ABS":
        if n != 1:
            raise ValueError(f"ABS is one-dimensional, got n={n}")
        return AbsoluteValue(1, np.zeros(1), 0.0, tie_tolerance)
    if key == "QUAD":
        if n < 1:
            raise ValueError(f"QUAD needs n >= 1, got {n}")
        return HalfSquaredNorm(n, np.zeros(n), 0.0, tie_tolerance)
    raise ValueError(f"unknown test function {name!r}; choose from {FUNCTION_NAMES}")


def is_differentiable(oracle: ObjectiveOracle, x) -> bool:
    return oracle.is_differentiable(x)


def finite_difference_check(oracle: ObjectiveOracle, x, h: float = 1e-6) -> float:
    """Max over coordinates of |central difference - analytic gradient|.

    Raises NonDifferentiableError at kinks, where the comparison is meaningless.
    """
    x = np.asarray(x, dtype=float)
    if h <= 0:
        raise ValueError("step h must be positive")
    if not oracle.is_differentiable(x):
        raise NonDifferentiableError(f"{oracle.name} is not differentiable at {x}")
    g = oracle.grad(x)
    err = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd = (oracle.eval(x + e) - oracle.eval(x - e)) / (2.0 * h)
        err = max(err, abs(fd - g[i]))
    return err
