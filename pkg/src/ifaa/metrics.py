"""Selection scoring and the rank-sum + Benjamini-Hochberg baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

EXACT_MAX_N = 12
METRICS = ("recall", "precision", "f1", "type1")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(selected, truth, universe) -> Confusion:
    selected, truth, universe = set(selected), set(truth), set(universe)
    if not selected <= universe or not truth <= universe:
        raise ValueError("selected and truth must be subsets of the evaluated taxa")
    tp = len(selected & truth)
    fp = len(selected - truth)
    fn = len(truth - selected)
    return Confusion(tp, fp, fn, len(universe) - tp - fp - fn)


def _ratio(a: int, b: int) -> float:
    return a / b if b else math.nan


def performance_metrics(c: Confusion) -> dict[str, float]:
    """Recall, precision, F1 and type I error rate; NaN marks an undefined index.

    F1 is the harmonic mean of recall and precision, so it is undefined
    whenever either of them is, and 0 when both are 0.
    """
    recall = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    if math.isnan(recall) or math.isnan(precision):
        f1 = math.nan
    elif recall + precision == 0:
        f1 = 0.0
    else:
        f1 = 2 * recall * precision / (recall + precision)
    return {"recall": recall, "precision": precision, "f1": f1, "type1": _ratio(c.fp, c.fp + c.tn)}


def _exact_rank_sum(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sided p by enumerating every split of the pooled midranks."""
    ranks = stats.rankdata(np.r_[a, b])
    n, na = len(ranks), len(a)
    centre = na * (n + 1) / 2
    obs = abs(ranks[:na].sum() - centre)
    sums = np.array([ranks[list(idx)].sum() for idx in combinations(range(n), na)])
    # small slack so that equal deviations computed in a different order still count
    return float(np.mean(np.abs(sums - centre) >= obs - 1e-9))


def wilcoxon_rank_sum(a, b) -> float:
    """Two-sided rank-sum p-value.

    Exact enumeration for at most 12 pooled observations, otherwise the
    normal approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples need at least one observation")
    if len(a) + len(b) <= EXACT_MAX_N:
        return _exact_rank_sum(a, b)
    return float(rank_sum_columns(a[:, None], b[:, None])[0])


def rank_sum_columns(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Normal-approximation rank-sum p-values for each column of A against B.

    Columns where all pooled values are tied carry no evidence and get p = 1.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    pooled = np.vstack([A, B])
    tied = (pooled == pooled[:1]).all(axis=0)
    p = np.ones(A.shape[1])
    if (~tied).any():
        res = stats.mannwhitneyu(A[:, ~tied], B[:, ~tied], alternative="two-sided", method="asymptotic",
                                 use_continuity=True, axis=0)
        p[~tied] = np.minimum(res.pvalue, 1.0)
    return p


def bh_adjust(p_values, q: float) -> set[int]:
    """Indices selected by the Benjamini-Hochberg step-up procedure at level q."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return set()
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    adj = stats.false_discovery_control(p, method="bh")
    return {int(i) for i in np.flatnonzero(adj <= q)}
