"""Run traces shared by the solvers and the benchmark harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TRACE_COLUMNS = ("phase", "k", "l", "f", "nu", "eps", "delta", "ared", "pred",
                 "accepted", "step_norm", "dist_to_xstar")

NAN = math.nan


@dataclass
class TraceRow:
    """One (outer, inner) iteration as written to a trace CSV."""

    phase: str
    k: int
    l: int
    f: float
    nu: float
    eps: float
    delta: float = NAN
    ared: float = NAN
    pred: float = NAN
    accepted: bool = False
    step_norm: float = NAN
    dist_to_xstar: float = NAN

    def as_tuple(self):
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass
class SolverTrace:
    """Everything a run produced.

    ``f_history[i]`` is f at the i-th iterate and ``time_history[i]`` the
    wall-clock seconds since the run started when it was reached. For hybrid
    runs ``switch_index`` is the position in ``f_history`` where the
    trust-region phase took over (None if it never ran).
    """

    solver: str
    function: str = ""
    seed: int | None = None
    rows: list = field(default_factory=list)
    f_history: list = field(default_factory=list)
    time_history: list = field(default_factory=list)
    switch_index: int | None = None
    status: str = ""
    x_final: np.ndarray | None = None
    f_final: float = NAN
    vec_nu: list = field(default_factory=list)
    vec_xstar: list = field(default_factory=list)
    note: str = ""


def distance(x, xstar):
    if xstar is None:
        return NAN
    return float(np.linalg.norm(np.asarray(x) - xstar))
