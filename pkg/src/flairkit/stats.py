"""The one percentile convention used everywhere in the package.

Percentiles interpolate linearly between the closest ranks, placing the
q-th percentile at 1-based rank ``q/100 * (n + 1)`` clamped to ``[1, n]``.
(This is numpy's ``method="weibull"``.) With three values the quartiles
land exactly on the first and last value, so ``{1.34, 3.30, 6.89}``
summarises as ``3.30 [1.34-6.89]``.

Intensity clipping, HD95 and the median/IQR summaries all go through
:func:`percentile`.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def _rank_position(n: int, q: float) -> tuple[int, float]:
    pos = min(max(q / 100.0 * (n + 1), 1.0), float(n))
    lo = int(math.floor(pos))
    return lo, pos - lo


def percentile(values, q: float) -> float:
    """q-th percentile (0 <= q <= 100) of a non-empty collection."""
    if not 0.0 <= q <= 100.0:
        raise ValueError(f"percentile must be within [0, 100], got {q}")
    arr = np.asarray(values, dtype=np.float64).ravel()
    n = arr.size
    if n == 0:
        raise ValueError("percentile of an empty collection")
    lo, frac = _rank_position(n, q)
    if frac == 0.0 or lo >= n:
        return float(np.partition(arr, lo - 1)[lo - 1])
    part = np.partition(arr, (lo - 1, lo))
    a, b = float(part[lo - 1]), float(part[lo])
    return a + frac * (b - a)


def median_iqr(values: Sequence[float]) -> tuple[float, float, float]:
    """(median, 25th percentile, 75th percentile)."""
    return percentile(values, 50.0), percentile(values, 25.0), percentile(values, 75.0)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation; std is 0 for a single value."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("mean of an empty collection")
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)
