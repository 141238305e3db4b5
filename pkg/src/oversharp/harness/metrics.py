"""Collapse detection and cross-seed summaries."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np


def detect_collapse(series: Sequence[float], threshold: float = 0.99, window: int = 50) -> int | None:
    """First t with series[u] >= threshold for every u in [t, t + window).

    Near the end the window is truncated, so the condition must hold through
    the last element.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("series must be non-empty")
    ok = s >= threshold
    # run[t] = length of the run of True values starting at t
    run = np.zeros(s.size + 1, dtype=int)
    for t in range(s.size - 1, -1, -1):
        run[t] = run[t + 1] + 1 if ok[t] else 0
    for t in range(s.size):
        if run[t] >= min(window, s.size - t) and ok[t]:
            return t
    return None


def collapse_values(steps: Iterable[int | None]) -> np.ndarray:
    """Collapse steps with 'never collapsed' mapped to +inf."""
    return np.array([math.inf if s is None else float(s) for s in steps])


def median_collapse(steps: Iterable[int | None]) -> float:
    return float(np.median(collapse_values(steps)))


def area_under_curve(series: Sequence[float]) -> float:
    """Mean of the series over steps, i.e. the AUC normalized by run length."""
    return float(np.mean(series))
