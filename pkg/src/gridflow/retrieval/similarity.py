from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityProfile:
    """Scores sorted non-increasing; ``original_index[n]`` is the archive
    position (0-based) of the record at rank ``n``."""

    scores: tuple[float, ...]
    original_index: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=float)


def _vec(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise EmbeddingError("embedding must be a non-empty 1-d vector")
    return arr


def cosine_similarity(u, v) -> float:
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("zero-norm vector has no direction")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def rank_by_similarity(query_vec, archive_vecs: Sequence) -> SimilarityProfile:
    """Cosine-rank the archive against the query, ties by archive index."""
    if len(archive_vecs) == 0:
        raise EmbeddingError("cannot rank an empty archive")
    q = _vec(query_vec)
    mat = np.asarray([_vec(v) for v in archive_vecs])
    if mat.shape[1] != q.size:
        raise EmbeddingError(f"dimension mismatch: query {q.size} vs archive {mat.shape[1]}")
    qn = np.linalg.norm(q)
    rn = np.linalg.norm(mat, axis=1)
    if qn == 0.0 or np.any(rn == 0.0):
        raise EmbeddingError("zero-norm vector has no direction")
    sims = np.clip(mat @ q / (rn * qn), -1.0, 1.0)
    order = np.lexsort((np.arange(len(sims)), -sims))
    return SimilarityProfile(
        scores=tuple(float(sims[i]) for i in order),
        original_index=tuple(int(i) for i in order),
    )
