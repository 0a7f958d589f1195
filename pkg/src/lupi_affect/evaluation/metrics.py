"""Accuracy, Pearson and concordance correlation, and the majority baseline.

PCC and CCC use population (1/n) moments.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import UndefinedCorrelationError
from ..windowing import HIGH, LOW


def accuracy(predictions, labels):
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape or p.size == 0:
        raise ValueError("predictions and labels must have equal, non-zero length")
    return float(np.mean(p == y))


def _moments(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("series must be 1-D, of equal length >= 2")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return mx, my, np.mean(dx * dx), np.mean(dy * dy), np.mean(dx * dy)


def pcc(x, y):
    mx, my, vx, vy, cov = _moments(x, y)
    if vx == 0 or vy == 0:
        raise UndefinedCorrelationError("PCC undefined for a constant series")
    r = cov / math.sqrt(vx * vy)
    return float(min(1.0, max(-1.0, r)))


def ccc(x, y):
    """Lin's concordance: ``2 cov / (var_x + var_y + (mean_x - mean_y)^2)``."""
    mx, my, vx, vy, cov = _moments(x, y)
    if vx == 0 and vy == 0 and mx == my:
        return 1.0
    if vx == 0 or vy == 0:
        raise UndefinedCorrelationError("CCC undefined for a constant series")
    c = 2 * cov / (vx + vy + (mx - my) ** 2)
    return float(min(1.0, max(-1.0, c)))


def safe_metric(fn, x, y):
    """``fn(x, y)`` or NaN when the correlation is undefined."""
    try:
        return fn(x, y)
    except UndefinedCorrelationError:
        return float("nan")


class MajorityClassifier:
    """Predicts the most frequent training class; a tie goes to LOW."""

    def __init__(self, train_labels):
        y = np.asarray(train_labels)
        if y.size == 0:
            raise ValueError("majority baseline needs training labels")
        n_high = int(np.sum(y == HIGH))
        n_low = int(np.sum(y == LOW))
        self.prediction = HIGH if n_high > n_low else LOW

    def predict(self, n):
        return np.full(n, self.prediction, dtype=np.int64)


def majority_baseline(train_labels):
    return MajorityClassifier(train_labels)


def confidence_halfwidth(values, z=1.959963984540054):
    """Normal-approximation 95% half-width of the mean of ``values`` (NaNs ignored)."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return float("nan")
    return float(z * v.std(ddof=1) / math.sqrt(v.size))
