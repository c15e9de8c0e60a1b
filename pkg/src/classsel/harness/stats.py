"""Statistics used in sweep summaries."""

from __future__ import annotations

import numpy as np
from scipy import stats as sps


def bootstrap_ci(samples, level: float = 0.95, resamples: int = 10000, seed: int = 0):
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("bootstrap needs at least one sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    # the sample mean must lie inside the reported interval
    lo, hi = min(lo, x.mean()), max(hi, x.mean())
    return float(lo), float(hi)


def welch_t_test(a, b) -> float:
    """Two-sided Welch t-test p-value."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        return 1.0 if diff == 0 else 0.0
    t = diff / np.sqrt(se2)
    df = se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    return float(2.0 * sps.t.sf(abs(t), df))


def rank_sum_test(a, b) -> float:
    """Two-sided Wilcoxon rank-sum p-value, normal approximation with tie correction."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n1, n2 = a.size, b.size
    n = n1 + n2
    ranks = sps.rankdata(np.concatenate([a, b]))
    w = ranks[:n1].sum()
    mean = n1 * (n + 1) / 2.0
    _, ties = np.unique(ranks, return_counts=True)
    var = n1 * n2 / 12.0 * ((n + 1) - np.sum(ties**3 - ties) / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (w - mean) / np.sqrt(var)
    return float(2.0 * sps.norm.sf(abs(z)))


def bonferroni(p: float, corrections: int) -> float:
    return float(min(1.0, p * max(int(corrections), 1)))


def compare_groups(a, b, method: str = "t_test", corrections: int = 1) -> float:
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two samples")
    if method == "t_test":
        p = welch_t_test(a, b)
    elif method == "rank_sum":
        p = rank_sum_test(a, b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return bonferroni(p, corrections)


def paired_t_test(a, b) -> float:
    """Two-sided paired t-test p-value."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.size < 2:
        raise ValueError("paired test needs at least two pairs")
    sd = d.std(ddof=1)
    if sd == 0:
        return 1.0 if d.mean() == 0 else 0.0
    t = d.mean() / (sd / np.sqrt(d.size))
    return float(2.0 * sps.t.sf(abs(t), d.size - 1))


def spearman(x, y) -> float:
    return float(sps.spearmanr(x, y).statistic)


def t95(curve) -> int:
    """First 1-indexed epoch reaching 95% of the curve's maximum."""
    c = np.asarray(curve, dtype=np.float64)
    if c.size == 0:
        raise ValueError("empty accuracy curve")
    return int(np.flatnonzero(c >= 0.95 * c.max())[0]) + 1
