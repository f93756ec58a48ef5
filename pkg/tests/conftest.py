"""Shared oracles and fixtures.

The oracles are deliberately naive: they enumerate or loop instead of using
the dynamic programs and vectorised code they check.
"""
from __future__ import annotations

import logging

import numpy as np
import pytest
from scipy.optimize import linprog

from lifemts.data import CLASSIFICATION, Dataset, TimeSeriesSample


def warping_paths(n: int, m: int):
    """Every monotone path from (0, 0) to (n-1, m-1) with steps (1,0), (0,1), (1,1)."""
    def extend(path):
        i, j = path[-1]
        if (i, j) == (n - 1, m - 1):
            yield list(path)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                path.append((i + di, j + dj))
                yield from extend(path)
                path.pop()
    yield from extend([(0, 0)])


def brute_force_pdtw(x, y, pen_x, pen_y) -> float:
    best = np.inf
    for path in warping_paths(len(x), len(y)):
        cost = sum((x[i] - y[j]) ** 2 + pen_x[i] + pen_y[j] for i, j in path)
        best = min(best, cost)
    return best


def exact_ot(cost, u, v) -> float:
    """Unregularised OT value by linear programming."""
    n, m = cost.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=np.concatenate([u, v]), bounds=(0, None),
                  method="highs")
    assert res.status == 0
    return float(res.fun)


def naive_dense_interpolate(H, F: int) -> np.ndarray:
    T, n = H.shape
    V = np.zeros((F, n))
    for t in range(1, T + 1):
        s = F * t / T
        for f in range(1, F + 1):
            w = (1.0 - abs(s - f) / F) ** 2
            for c in range(n):
                V[f - 1, c] += w * H[t - 1, c]
    return V.reshape(-1)


def scan_intervals(timestamps, mask) -> np.ndarray:
    """Time since the most recent observation strictly before t (or since t_0)."""
    T, D = mask.shape
    out = np.zeros((T, D))
    for d in range(D):
        for t in range(T):
            last = timestamps[0]
            for s in range(t):
                if mask[s, d]:
                    last = timestamps[s]
            out[t, d] = timestamps[t] - last
    return out


def random_sample(rng, T, D, missing=0.3, label=None, step_range=(0.5, 2.0)):
    values = rng.normal(size=(T, D))
    mask = (rng.random((T, D)) >= missing).astype(int)
    ts = np.cumsum(rng.uniform(*step_range, size=T))
    return TimeSeriesSample(values, mask, ts, label=label)


def random_dataset(rng, n, T, D, missing=0.3, n_classes=2):
    samples = [random_sample(rng, T, D, missing, label=int(rng.integers(n_classes))) for _ in range(n)]
    return Dataset(tuple(samples), CLASSIFICATION, n_classes=n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_package_logs():
    logger = logging.getLogger("lifemts")
    level = logger.level
    logger.setLevel(logging.ERROR)
    yield
    logger.setLevel(level)
