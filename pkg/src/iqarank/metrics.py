"""Rank-order and linear correlation between predicted and subjective scores."""
from __future__ import annotations

import numpy as np


class UndefinedCorrelationError(ValueError):
    """Correlation is undefined (constant input or fewer than two samples)."""


def _pairs(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelationError("need at least two samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("scores must be finite")
    return a, b


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    run_rank = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1 .. end
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def plcc(pred, truth) -> float:
    """Pearson linear correlation coefficient."""
    a, b = _pairs(pred, truth)
    da = a - a.mean()
    db = b - b.mean()
    saa = np.sum(da * da)
    sbb = np.sum(db * db)
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("zero variance: correlation undefined")
    # one square root of the product: identical inputs give exactly 1
    r = float(np.sum(da * db) / np.sqrt(saa * sbb))
    return min(1.0, max(-1.0, r))


def srocc(pred, truth) -> float:
    """Spearman rank-order correlation (Pearson correlation of average ranks)."""
    a, b = _pairs(pred, truth)
    return plcc(average_ranks(a), average_ranks(b))


def srocc_closed_form(pred, truth) -> float:
    """``1 - 6 sum d^2 / (N (N^2 - 1))``; exact only for tie-free inputs."""
    a, b = _pairs(pred, truth)
    d = average_ranks(a) - average_ranks(b)
    n = a.size
    return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))


def weighted_average(values, sizes) -> float:
    """Dataset-size weighted mean of per-dataset metrics."""
    values = np.asarray(values, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    return float(np.sum(values * sizes) / np.sum(sizes))
