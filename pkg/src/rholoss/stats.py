"""Small statistics helpers: tie-aware ranks, Spearman correlation, paired tests."""
from __future__ import annotations

import numpy as np
from scipy import stats as _scipy_stats


def rankdata_average(x) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the average of their ranks."""
    a = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float | None:
    """Pearson correlation; None when either vector has zero variance."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0 or not np.isfinite(denom):
        return None
    return float((a * b).sum() / denom)


def spearman(xs, ys) -> float | None:
    """Rank correlation with average ranks for ties.

    Returns None (rather than a number) when either input is constant, since
    the correlation is undefined there.
    """
    a = np.asarray(xs, dtype=np.float64).ravel()
    b = np.asarray(ys, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 observations")
    return pearson(rankdata_average(a), rankdata_average(b))


def paired_one_sided_t(a, b) -> tuple[float, float]:
    """One-sided paired t-test of the alternative mean(a) < mean(b).

    Returns (t, p). With zero variance in the differences the p-value
    degenerates to 0 or 1 depending on the sign of the mean difference.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    sd = d.std(ddof=1)
    if sd == 0.0:
        return (-np.inf if d.mean() < 0 else np.inf), (0.0 if d.mean() < 0 else 1.0)
    t = d.mean() / (sd / np.sqrt(n))
    p = float(_scipy_stats.t.cdf(t, df=n - 1))
    return float(t), p
