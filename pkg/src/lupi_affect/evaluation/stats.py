"""Normality-gated paired significance testing.

The paired differences go through D'Agostino-Pearson first; when normality is
not rejected at 0.05 a one-tailed paired t-test is used, otherwise a
one-tailed Wilcoxon signed-rank test (exact null distribution for n <= 25,
normal approximation with tie correction above).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

log = logging.getLogger(__name__)

ALPHA = 0.05
NORMALITY_MIN_N = 20
WILCOXON_EXACT_MAX_N = 25


def _norm_sf(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def skewness_z(x):
    """D'Agostino's transform of sample skewness to an approximate N(0, 1) score."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d**2)
    b1 = np.mean(d**3) / m2**1.5
    y = b1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n**2 + 27 * n - 70) * (n + 1) * (n + 3) / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9))
    w2 = -1 + math.sqrt(2 * (beta2 - 1))
    delta = 1 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1))
    return delta * math.log(y / alpha + math.sqrt((y / alpha) ** 2 + 1))


def kurtosis_z(x):
    """Anscombe-Glynn transform of sample kurtosis to an approximate N(0, 1) score."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    d = x - x.mean()
    m2 = np.mean(d**2)
    b2 = np.mean(d**4) / m2**2
    e = 3.0 * (n - 1) / (n + 1)
    var = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) ** 2 * (n + 3) * (n + 5))
    xs = (b2 - e) / math.sqrt(var)
    sqrt_beta1 = 6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9)) * math.sqrt(
        6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3))
    )
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + math.sqrt(1 + 4.0 / sqrt_beta1**2))
    term1 = 1 - 2 / (9.0 * a)
    denom = 1 + xs * math.sqrt(2 / (a - 4.0))
    term2 = math.copysign(abs((1 - 2.0 / a) / denom) ** (1 / 3.0), denom) if denom != 0 else math.nan
    return (term1 - term2) / math.sqrt(2 / (9.0 * a))


def dagostino_pearson(diffs):
    """Omnibus K^2 normality test; returns the p-value (chi-square, 2 dof).

    A zero-variance sample is degenerate and rejected by convention (p = 0).
    """
    x = np.asarray(diffs, dtype=np.float64)
    if x.size < 8:
        raise ValueError("D'Agostino-Pearson needs at least 8 observations")
    if np.ptp(x) == 0:
        return 0.0
    k2 = skewness_z(x) ** 2 + kurtosis_z(x) ** 2
    if not math.isfinite(k2):
        return 0.0
    return math.exp(-k2 / 2.0)


def paired_t_test(diffs):
    """One-tailed paired t-test of mean(diffs) > 0; returns (t, p)."""
    d = np.asarray(diffs, dtype=np.float64)
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0:
        mean = d.mean()
        if mean > 0:
            return math.inf, 0.0
        return (-math.inf if mean < 0 else 0.0), (1.0 if mean < 0 else 0.5)
    t = d.mean() / (sd / math.sqrt(n))
    return float(t), float(sps.t.sf(t, n - 1))


def signed_ranks(diffs):
    """Ranks of |d| over the non-zero differences (average ranks for ties)."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    return d, sps.rankdata(np.abs(d))


def _exact_upper_tail(ranks, w_plus):
    # distribution of the positive-rank sum by subset-sum counting on doubled ranks
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    observed = int(round(2 * w_plus))
    return float(sum(counts[observed:]) / 2 ** len(doubled))


def wilcoxon_signed_rank(diffs, exact=None):
    """One-tailed Wilcoxon signed-rank test of a positive location shift.

    Zero differences are dropped. Returns ``(w_plus, p, method)``.
    """
    d, ranks = signed_ranks(diffs)
    n = d.size
    if n == 0:
        return 0.0, 1.0, "exact"
    w_plus = float(ranks[d > 0].sum())
    use_exact = n <= WILCOXON_EXACT_MAX_N if exact is None else exact
    if use_exact:
        return w_plus, _exact_upper_tail(ranks, w_plus), "exact"
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)  # continuity correction
    return w_plus, _norm_sf(z), "normal"


@dataclass
class SignificanceReport:
    normality_p: float | None
    test_used: str
    statistic: float
    p_value: float
    significant: bool
    direction: str
    n: int
    mean_diff: float
    wilcoxon_method: str | None = None
    note: str = ""

    def to_dict(self):
        return asdict(self)


def paired_test(a, b, alternative="a_greater", names=("a", "b")):
    """Normality-gated one-tailed paired comparison of per-fold metrics ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and aligned, got {a.shape} and {b.shape}")
    keep = np.isfinite(a) & np.isfinite(b)
    note = ""
    if not keep.all():
        note = f"dropped {int((~keep).sum())} pairs with missing values; "
        a, b = a[keep], b[keep]
    if a.size < 5:
        raise ValueError(f"paired test needs n >= 5, got {a.size}")
    if alternative == "a_greater":
        diffs = a - b
    elif alternative == "b_greater":
        diffs = b - a
        names = names[::-1]
    else:
        raise ValueError(f"unknown alternative {alternative!r}")

    normality_p = None
    if diffs.size >= NORMALITY_MIN_N:
        normality_p = dagostino_pearson(diffs)
        normal = normality_p >= ALPHA
    else:
        msg = f"n={diffs.size} below {NORMALITY_MIN_N}: normality not testable, using Wilcoxon"
        warnings.warn(msg, stacklevel=2)
        note += msg
        normal = False

    wmethod = None
    if normal:
        stat, p = paired_t_test(diffs)
        test = "t-test"
    else:
        stat, p, wmethod = wilcoxon_signed_rank(diffs)
        test = "wilcoxon"
    mean_diff = float(diffs.mean())
    if mean_diff > 0:
        direction = f"{names[0]} > {names[1]}"
    elif mean_diff < 0:
        direction = f"{names[1]} > {names[0]}"
    else:
        direction = "tie"
    return SignificanceReport(
        normality_p=normality_p,
        test_used=test,
        statistic=float(stat),
        p_value=float(p),
        significant=bool(p < ALPHA),
        direction=direction,
        n=int(diffs.size),
        mean_diff=mean_diff,
        wilcoxon_method=wmethod,
        note=note.strip(),
    )
