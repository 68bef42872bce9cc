"""Seeded uniform sampling in closed Euclidean balls."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

MAX_RETRIES = 100


class SamplingError(RuntimeError):
    """Could not draw differentiable points within the retry budget."""


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the stream is identical on every platform for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_ball(center, radius: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` points uniformly from the closed ball B(center, radius).

    Uses a Gaussian direction scaled by radius * U^(1/n). Returns an (m, n)
    array.
    """
    center = np.asarray(center, dtype=float)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if m < 1:
        raise ValueError("need at least one sample")
    n = center.size
    direction = rng.standard_normal((m, n))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    # a zero Gaussian vector has probability zero; redraw to be safe
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        direction[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
    scale = radius * rng.random((m, 1)) ** (1.0 / n)
    pts = center + direction / norms * scale
    if radius == 0.0:
        pts[:] = center
    return pts


def sample_in_D(oracle, center, radius: float, m: int, rng: np.random.Generator,
                max_retries: int = MAX_RETRIES) -> np.ndarray:
    """Like :func:`sample_ball`, but every returned point is a differentiable
    point of ``oracle``. Offending points are redrawn; after ``max_retries``
    rounds a :class:`SamplingError` is raised.
    """
    pts = sample_ball(center, radius, m, rng)
    bad = np.array([not oracle.is_differentiable(p) for p in pts])
    retries = 0
    while bad.any():
        if retries >= max_retries:
            raise SamplingError(
                f"{int(bad.sum())} of {m} samples still nondifferentiable after "
                f"{max_retries} retries (radius={radius:g})")
        retries += 1
        idx = np.flatnonzero(bad)
        pts[idx] = sample_ball(center, radius, idx.size, rng)
        bad[idx] = [not oracle.is_differentiable(pts[i]) for i in idx]
    if retries:
        logger.info("resampled nondifferentiable points %d time(s)", retries)
    return pts
