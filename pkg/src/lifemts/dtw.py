"""Dynamic time warping with a missingness penalty.

Both functions use the symmetric step set {(1,0), (0,1), (1,1)}, no window and
no path-length normalisation. The penalised variant adds
``p * (delta_x[i] * (1 - m_x[i]) + delta_y[j] * (1 - m_y[j]))`` to every cell
so long gaps of interpolated values make an alignment more expensive.
"""
from __future__ import annotations

import numba as nb
import numpy as np

from .exceptions import InputError


@nb.njit(cache=True)
def _accumulate(local):
    n, m = local.shape
    acc = np.empty((n, m))
    acc[0, 0] = local[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + local[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + local[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + local[i, j]
    return acc[n - 1, m - 1]


@nb.njit(cache=True)
def _pdtw_kernel(x, y, px, py):
    n = x.shape[0]
    m = y.shape[0]
    local = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            diff = x[i] - y[j]
            local[i, j] = diff * diff + px[i] + py[j]
    return _accumulate(local)


def _as_series(x, name):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError(f"{name} must be a non-empty 1-D series")
    return x


def dtw(x, y) -> float:
    """Classic DTW with squared-difference local cost."""
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    return float(_pdtw_kernel(x, y, np.zeros(x.size), np.zeros(y.size)))


def missing_penalty(mask, intervals, p: float) -> np.ndarray:
    """Per-point penalty ``p * delta * (1 - m)``."""
    mask = np.asarray(mask, dtype=np.float64)
    intervals = np.asarray(intervals, dtype=np.float64)
    return p * intervals * (1.0 - mask)


def pdtw(x1, x2, m1, m2, d1, d2, p: float = 0.5) -> float:
    """Penalty DTW between two already-imputed series.

    Parameters
    ----------
    x1, x2 : array-like, shape (T1,), (T2,)
        Series with missing points filled (e.g. linearly interpolated).
    m1, m2 : array-like of {0, 1}
        Observation masks.
    d1, d2 : array-like
        Time since last observation for each point.
    p : float
        Non-negative penalty coefficient. ``p=0`` gives plain DTW.
    """
    if p < 0:
        raise InputError(f"penalty coefficient must be non-negative, got {p}")
    x1 = _as_series(x1, "x1")
    x2 = _as_series(x2, "x2")
    for x, m, d in ((x1, m1, d1), (x2, m2, d2)):
        if np.shape(m) != x.shape or np.shape(d) != x.shape:
            raise InputError("mask/interval lengths must match their series")
    pen1 = missing_penalty(m1, d1, p)
    pen2 = missing_penalty(m2, d2, p)
    return float(_pdtw_kernel(x1, x2, pen1, pen2))
