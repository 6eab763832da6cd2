"""Accuracy metric and the nonparametric test battery.

Algorithms are compared per session with a Friedman rank test over subjects,
a one-sided Holm step-down post-hoc against the no-calibration control, and
paired effect sizes (Cohen's Dz). A Wilcoxon signed-rank test (exact null up
to n = 20) backs pairwise comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DataError, EmptyInputError, NumericError, ShapeError


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError(f"predictions {predictions.shape} vs labels {labels.shape}")
    if predictions.size == 0:
        raise EmptyInputError("no predictions to score")
    return float(np.mean(predictions == labels))


@dataclass(frozen=True)
class FriedmanResult:
    avg_ranks: np.ndarray  # (k,), rank 1 = best
    statistic: float
    p_value: float


def friedman_test(table: np.ndarray) -> FriedmanResult:
    """Friedman rank test over an (n subjects x k algorithms) accuracy table.

    Each row is ranked with rank 1 for the highest accuracy and mid-ranks for
    ties; the chi-square approximation gives the p-value. A table where every
    row is constant yields statistic 0 and p = 1.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2:
        raise ShapeError(f"expected (subjects, algorithms) table, got {table.shape}")
    n, k = table.shape
    if n < 2 or k < 2:
        raise DataError(f"need >= 2 subjects and >= 2 algorithms, got {table.shape}")
    ranks = np.vstack([sps.rankdata(-row) for row in table])
    avg = ranks.mean(axis=0)
    statistic = 12.0 * n / (k * (k + 1)) * float(np.sum((avg - (k + 1) / 2.0) ** 2))
    p_value = float(sps.chi2.sf(statistic, k - 1)) if statistic > 0 else 1.0
    return FriedmanResult(avg_ranks=avg, statistic=statistic, p_value=p_value)


@dataclass(frozen=True)
class HolmResult:
    control: int
    z_values: np.ndarray  # per algorithm; NaN at the control
    p_values: np.ndarray  # one-sided raw p; NaN at the control
    p_adjusted: np.ndarray  # Holm-adjusted; NaN at the control
    reject: np.ndarray  # bool; False at the control


def holm_posthoc(avg_ranks: np.ndarray, n: int, control: int, alpha: float = 0.05) -> HolmResult:
    """One-sided Holm step-down versus a control algorithm.

    The alternative is "algorithm ranks better (lower) than the control":
    z_j = (R_control - R_j) / sqrt(k (k + 1) / (6 n)). Comparisons are ordered
    by ascending p and rejected while p_(i) <= alpha / (m - i + 1).
    """
    avg_ranks = np.asarray(avg_ranks, dtype=np.float64)
    k = len(avg_ranks)
    if not 0 <= control < k:
        raise DataError(f"control index {control} outside 0..{k - 1}")
    se = np.sqrt(k * (k + 1) / (6.0 * n))
    z = (avg_ranks[control] - avg_ranks) / se
    p = sps.norm.sf(z)
    others = [j for j in range(k) if j != control]
    order = sorted(others, key=lambda j: p[j])
    m = len(others)
    adjusted = np.full(k, np.nan)
    reject = np.zeros(k, dtype=bool)
    running_max = 0.0
    still_rejecting = True
    for i, j in enumerate(order):
        running_max = max(running_max, (m - i) * p[j])
        adjusted[j] = min(1.0, running_max)
        if still_rejecting and p[j] <= alpha / (m - i):
            reject[j] = True
        else:
            still_rejecting = False
    z_out = z.copy()
    p_out = p.copy()
    z_out[control] = np.nan
    p_out[control] = np.nan
    return HolmResult(control=control, z_values=z_out, p_values=p_out,
                      p_adjusted=adjusted, reject=reject)


def _signed_rank_statistic(diffs: np.ndarray) -> tuple[float, np.ndarray]:
    ranks = sps.rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    return w_plus, ranks


def _exact_tail_probs(ranks: np.ndarray, w_plus: float) -> tuple[float, float]:
    """P(W+ <= w) and P(W+ >= w) by dynamic programming over sign patterns.

    Ranks are doubled so mid-ranks become integers; the distribution of W+
    under sign flips is enumerated exactly.
    """
    scaled = np.round(ranks * 2).astype(np.int64)
    total = int(scaled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in scaled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(w_plus * 2))
    p_le = float(counts[: w2 + 1].sum())
    p_ge = float(counts[w2:].sum())
    return p_le, p_ge


def wilcoxon_signed_rank(a: np.ndarray, b: np.ndarray, alternative: str = "two-sided",
                         exact_threshold: int = 20) -> float:
    """Paired signed-rank test p-value; zero differences are dropped.

    Uses the exact sign-flip null up to `exact_threshold` pairs and the
    tie-corrected normal approximation (with continuity correction) beyond.
    `alternative` is "two-sided", "greater" (a > b) or "less".
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be equal-length vectors, got {a.shape}, {b.shape}")
    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n == 0:
        return 1.0
    w_plus, ranks = _signed_rank_statistic(diffs)
    if n <= exact_threshold:
        p_le, p_ge = _exact_tail_probs(ranks, w_plus)
        if alternative == "greater":
            return min(1.0, p_ge)
        if alternative == "less":
            return min(1.0, p_le)
        return min(1.0, 2.0 * min(p_le, p_ge))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    sd = np.sqrt(var)
    if alternative == "greater":
        return float(sps.norm.sf((w_plus - mean - 0.5) / sd))
    if alternative == "less":
        return float(sps.norm.cdf((w_plus - mean + 0.5) / sd))
    z = (w_plus - mean - 0.5 * np.sign(w_plus - mean)) / sd
    return float(min(1.0, 2.0 * sps.norm.sf(abs(z))))


def cohens_dz(a: np.ndarray, b: np.ndarray) -> float:
    """Paired effect size: mean(a - b) / sample std of the differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be equal-length vectors, got {a.shape}, {b.shape}")
    if len(a) < 2:
        raise DataError(f"need >= 2 pairs, got {len(a)}")
    diffs = a - b
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        raise NumericError("zero-variance differences: effect size undefined")
    return float(np.mean(diffs) / sd)
