"""Listening-test statistics: win counting, Kruskal-Wallis H and the Wilcoxon
signed-rank test with Bonferroni correction.

Both tests are rank based with average ranks on ties. The Wilcoxon null
distribution is exact (sign-assignment enumeration via dynamic programming)
up to 25 non-zero differences and a normal approximation with continuity
correction above; chi-squared tail probabilities come from the regularized
upper incomplete gamma function.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaincc

EXACT_WILCOXON_LIMIT = 25


class StatsError(ValueError):
    pass


def chi2_sf(x: float, df: int) -> float:
    """Chi-squared survival function P(X >= x) with df degrees of freedom."""
    if df <= 0:
        raise StatsError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_values = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class KruskalResult:
    h: float
    df: int
    p: float
    group_sizes: tuple[int, ...]


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KruskalResult:
    """Kruskal-Wallis H with tie correction; p from the chi-squared tail."""
    if len(groups) < 2:
        raise StatsError("need at least two groups")
    sizes = tuple(len(g) for g in groups)
    if any(s == 0 for s in sizes):
        raise StatsError("groups must be nonempty")
    pooled = np.concatenate([np.asarray(g, dtype=np.float64) for g in groups])
    n = len(pooled)
    ranks = _average_ranks(pooled)
    df = len(groups) - 1
    if np.all(pooled == pooled[0]):
        return KruskalResult(h=0.0, df=df, p=1.0, group_sizes=sizes)
    h = 0.0
    start = 0
    for size in sizes:
        r = ranks[start : start + size]
        h += r.sum() ** 2 / size
        start += size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    _, tie_counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(np.sum(tie_counts**3 - tie_counts)) / (n**3 - n)
    if correction > 0:
        h /= correction
    return KruskalResult(h=float(h), df=df, p=chi2_sf(float(h), df), group_sizes=sizes)


@dataclass(frozen=True)
class WilcoxonResult:
    w: float  # sum of ranks of positive differences
    p: float
    n: int  # non-zero differences used
    method: str  # "exact" or "normal"
    all_zero: bool = False


def _exact_wilcoxon_tail(doubled_ranks: list[int], w2: int, alternative: str) -> float:
    """P over all 2^n sign assignments, via DP on the doubled rank sums.

    Ranks are doubled so tied (half-integer) average ranks stay integral.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total - r, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
    denom = 2 ** len(doubled_ranks)
    if alternative == "greater":
        favorable = sum(counts[w2:])
    elif alternative == "less":
        favorable = sum(counts[: w2 + 1])
    else:  # two-sided: double the smaller tail, capped at 1
        upper = sum(counts[w2:])
        lower = sum(counts[: w2 + 1])
        return min(1.0, 2.0 * min(upper, lower) / denom)
    return favorable / denom


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float] | None = None,
    alternative: str = "two-sided",
) -> WilcoxonResult:
    """Wilcoxon signed-rank test on paired samples (or on differences).

    Zero differences are dropped; |differences| are ranked with average
    ranks on ties. W is the positive-rank sum.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise StatsError(f"unknown alternative {alternative!r}")
    x = np.asarray(x, dtype=np.float64)
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise StatsError("paired samples must have equal length")
        diffs = x - y
    else:
        diffs = x
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(w=0.0, p=1.0, n=0, method="degenerate", all_zero=True)
    ranks = _average_ranks(np.abs(diffs))
    w_pos = float(ranks[diffs > 0].sum())
    if n <= EXACT_WILCOXON_LIMIT:
        doubled = [int(round(2 * r)) for r in ranks]
        w2 = int(round(2 * w_pos))
        p = _exact_wilcoxon_tail(doubled, w2, alternative)
        return WilcoxonResult(w=w_pos, p=float(p), n=n, method="exact")
    # Normal approximation with tie correction and continuity correction.
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sd == 0:
        return WilcoxonResult(w=w_pos, p=1.0, n=n, method="normal")

    def upper(wv: float) -> float:
        z = (wv - mean - 0.5) / sd
        return 0.5 * math.erfc(z / math.sqrt(2.0))

    def lower(wv: float) -> float:
        z = (wv - mean + 0.5) / sd
        return 0.5 * math.erfc(-z / math.sqrt(2.0))

    if alternative == "greater":
        p = upper(w_pos)
    elif alternative == "less":
        p = lower(w_pos)
    else:
        p = min(1.0, 2.0 * min(upper(w_pos), lower(w_pos)))
    return WilcoxonResult(w=w_pos, p=float(p), n=n, method="normal")


@dataclass(frozen=True)
class BonferroniDecision:
    p_raw: float
    p_adjusted: float
    significant: bool


def bonferroni(p_values: Sequence[float], m: int | None = None, alpha: float = 0.001) -> list[BonferroniDecision]:
    """Bonferroni correction: significant iff p < alpha / m."""
    if m is None:
        m = len(p_values)
    if m <= 0:
        raise StatsError("number of comparisons must be positive")
    return [
        BonferroniDecision(p_raw=p, p_adjusted=min(1.0, p * m), significant=p < alpha / m)
        for p in p_values
    ]


def count_wins(ratings: Iterable) -> tuple[Counter, dict[tuple[str, str], Counter]]:
    """Tally wins per model and per unordered model pair.

    Accepts any iterable of objects (or dicts) carrying model_a, model_b,
    and winner in {"A", "B"}.
    """
    totals: Counter = Counter()
    per_pair: dict[tuple[str, str], Counter] = {}
    for r in ratings:
        get = r.get if isinstance(r, dict) else lambda k, _r=r: getattr(_r, k)
        model_a, model_b, winner = get("model_a"), get("model_b"), get("winner")
        won = model_a if winner == "A" else model_b
        totals[won] += 1
        key = tuple(sorted((model_a, model_b)))
        per_pair.setdefault(key, Counter())[won] += 1
    return totals, per_pair
