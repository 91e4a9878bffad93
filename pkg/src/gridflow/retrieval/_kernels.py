"""Numeric kernels for the similarity profile: segment fits and the
two-segment cutoff objective.

Each kernel has a loop form (compiled by numba when enabled) and a
vectorized numpy form. ``BACKEND`` names the one in use.
"""

from __future__ import annotations

import numpy as np

from gridflow._accel import HAVE_NUMBA, maybe_njit


def _segment_sse_loop(y, a, b):
    # 0-based inclusive bounds; x runs over the 1-based indices a+1..b+1
    n = b - a + 1
    xbar = 0.0
    ybar = 0.0
    for t in range(a, b + 1):
        xbar += t + 1.0
        ybar += y[t]
    xbar /= n
    ybar /= n
    sxx = 0.0
    sxy = 0.0
    for t in range(a, b + 1):
        dx = t + 1.0 - xbar
        sxx += dx * dx
        sxy += dx * (y[t] - ybar)
    slope = sxy / sxx
    sse = 0.0
    for t in range(a, b + 1):
        r = (y[t] - ybar) - slope * (t + 1.0 - xbar)
        sse += r * r
    return sse


def _cutoff_objective_loop(y):
    n = y.shape[0]
    out = np.empty(n - 3)
    for m in range(2, n - 1):
        left = np.sqrt(_segment_sse_loop(y, 0, m - 1) / m)
        right = np.sqrt(_segment_sse_loop(y, m, n - 1) / (n - m))
        out[m - 2] = (m / n) * left + ((n - m) / n) * right
    return out


if HAVE_NUMBA:
    _segment_sse_loop = maybe_njit(_segment_sse_loop)
    _cutoff_objective_loop = maybe_njit(_cutoff_objective_loop)


def _segment_sse_numpy(y: np.ndarray, a: int, b: int) -> float:
    seg = y[a : b + 1]
    x = np.arange(a + 1, b + 2, dtype=float)
    dx = x - x.mean()
    dy = seg - seg.mean()
    slope = np.dot(dx, dy) / np.dot(dx, dx)
    r = dy - slope * dx
    return float(np.dot(r, r))


def _masked_rmse(y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise least-squares RMSE over the masked entries of (index, y)."""
    x = np.arange(1, y.shape[0] + 1, dtype=float)
    cnt = mask.sum(axis=1)
    xbar = np.where(mask, x, 0.0).sum(axis=1) / cnt
    ybar = np.where(mask, y, 0.0).sum(axis=1) / cnt
    dx = np.where(mask, x[None, :] - xbar[:, None], 0.0)
    dy = np.where(mask, y[None, :] - ybar[:, None], 0.0)
    slope = (dx * dy).sum(axis=1) / (dx * dx).sum(axis=1)
    r = dy - slope[:, None] * dx
    return np.sqrt((r * r).sum(axis=1) / cnt)


def _cutoff_objective_numpy(y: np.ndarray) -> np.ndarray:
    n = y.shape[0]
    ms = np.arange(2, n - 1)
    idx = np.arange(n)
    left = idx[None, :] < ms[:, None]
    left_rmse = _masked_rmse(y, left)
    right_rmse = _masked_rmse(y, ~left)
    return (ms / n) * left_rmse + ((n - ms) / n) * right_rmse


if HAVE_NUMBA:
    BACKEND = "numba"
    segment_sse = _segment_sse_loop
    cutoff_objective = _cutoff_objective_loop
else:
    BACKEND = "numpy"
    segment_sse = _segment_sse_numpy
    cutoff_objective = _cutoff_objective_numpy

KERNELS = {
    "numpy": (_segment_sse_numpy, _cutoff_objective_numpy),
    "loop": (_segment_sse_loop, _cutoff_objective_loop),
}
