"""Adaptive cutoff on a descending similarity profile.

The profile is split at m into ranks 1..m and m+1..N; each side gets its
own least-squares line and the breakpoint minimizing the size-weighted sum
of the two RMSEs is kept.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .similarity import SimilarityProfile

# objective values this close to the minimum count as ties (smallest m wins)
TIE_ATOL = 1e-12


class DegenerateProfile(ValueError):
    """Fewer than 4 scores: no admissible breakpoint exists."""


def segment_fit_rmse(profile_scores: Sequence[float], a: int, b: int) -> float:
    """RMSE of the affine least-squares fit of (n, score_n) for n = a..b (1-based, inclusive)."""
    y = np.asarray(profile_scores, dtype=float)
    if b <= a:
        raise ValueError(f"segment needs b > a, got a={a}, b={b}")
    if a < 1 or b > y.size:
        raise ValueError(f"segment [{a}, {b}] outside 1..{y.size}")
    sse = _kernels.segment_sse(y, a - 1, b - 1)
    return float(np.sqrt(sse / (b - a + 1)))


def cutoff_objective(profile_scores: Sequence[float]) -> np.ndarray:
    """Objective value for every breakpoint m = 2..N-2 (entry m-2)."""
    y = np.ascontiguousarray(profile_scores, dtype=float)
    if y.size < 4:
        raise DegenerateProfile(f"need at least 4 scores, got {y.size}")
    return np.asarray(_kernels.cutoff_objective(y))


def argmin_with_ties(values: np.ndarray, atol: float = TIE_ATOL) -> int:
    best = float(np.min(values))
    return int(np.flatnonzero(values <= best + atol)[0])


def adaptive_cutoff(profile: SimilarityProfile | Sequence[float]) -> int:
    """Breakpoint m in [2, N-2]; number of top-ranked records to keep."""
    scores = profile.scores if isinstance(profile, SimilarityProfile) else profile
    obj = cutoff_objective(scores)
    return argmin_with_ties(obj) + 2
