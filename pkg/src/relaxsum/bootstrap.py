"""Paired significance tests for per-record system scores."""
from __future__ import annotations

from typing import Sequence

import numpy as np

DEFAULT_RESAMPLES = 10_000


def _paired(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired scores must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("need at least two paired records")
    return a - b


def _chunks(total: int, size: int):
    for start in range(0, total, size):
        yield min(size, total - start)


def bootstrap_test(scores_a: Sequence[float], scores_b: Sequence[float], resamples: int = DEFAULT_RESAMPLES,
                   rng: np.random.Generator | int | None = 0, chunk: int = 2000) -> float:
    """Two-sided p-value for the mean paired difference ``a - b``.

    Record indices are resampled with replacement; p is twice the fraction of
    resamples whose mean difference is zero or has the opposite sign to the
    observed one, clamped to [0, 1].
    """
    d = _paired(scores_a, scores_b)
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = np.random.default_rng(rng)
    observed = d.mean()
    if observed == 0.0:
        return 1.0
    sign = np.sign(observed)
    against = 0
    for m in _chunks(resamples, chunk):
        means = d[rng.integers(0, d.size, size=(m, d.size))].mean(axis=1)
        against += int(np.count_nonzero(np.sign(means) != sign))
    return min(1.0, 2.0 * against / resamples)


def permutation_test(scores_a: Sequence[float], scores_b: Sequence[float], resamples: int = DEFAULT_RESAMPLES,
                     rng: np.random.Generator | int | None = 0, chunk: int = 2000) -> float:
    """Two-sided sign-flip permutation p-value for the mean paired difference."""
    d = _paired(scores_a, scores_b)
    rng = np.random.default_rng(rng)
    observed = abs(d.mean())
    hits = 0
    for m in _chunks(resamples, chunk):
        signs = rng.integers(0, 2, size=(m, d.size)) * 2 - 1
        hits += int(np.count_nonzero(np.abs((signs * d).mean(axis=1)) >= observed - 1e-15))
    return (hits + 1) / (resamples + 1)
