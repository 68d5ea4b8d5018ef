import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ifaa.metrics import Confusion, bh_adjust, confusion, performance_metrics, wilcoxon_rank_sum


def test_confusion_all_selected():
    u = {"a", "b", "c"}
    assert confusion(u, u, u) == Confusion(3, 0, 0, 0)


def test_confusion_nothing():
    assert confusion(set(), set(), {"a", "b"}) == Confusion(0, 0, 0, 2)


def test_confusion_enumeration():
    assert confusion({"a", "b"}, {"b", "c"}, {"a", "b", "c", "d"}) == Confusion(1, 1, 1, 1)


def test_confusion_requires_subsets():
    with pytest.raises(ValueError):
        confusion({"z"}, set(), {"a"})


def test_metric_formulas():
    m = performance_metrics(Confusion(75, 25, 25, 375))
    assert m == {"recall": 0.75, "precision": 0.75, "f1": 0.75, "type1": 0.0625}


def test_perfect_classifier():
    assert performance_metrics(Confusion(10, 0, 0, 40)) == {"recall": 1, "precision": 1, "f1": 1, "type1": 0}


def test_equal_recall_precision_f1():
    assert performance_metrics(Confusion(5, 5, 5, 0))["f1"] == pytest.approx(0.5)


def test_undefined_precision_flagged():
    m = performance_metrics(Confusion(0, 0, 10, 90))
    assert math.isnan(m["precision"]) and math.isnan(m["f1"])
    assert m["recall"] == 0 and m["type1"] == 0


def test_zero_recall_and_precision():
    assert performance_metrics(Confusion(0, 3, 4, 5))["f1"] == 0.0


counts = st.integers(0, 500)


@given(counts, counts, counts, counts, st.integers(2, 50))
def test_metrics_scale_free(tp, fp, fn, tn, c):
    a = performance_metrics(Confusion(tp, fp, fn, tn))
    b = performance_metrics(Confusion(c * tp, c * fp, c * fn, c * tn))
    for k in a:
        assert (math.isnan(a[k]) and math.isnan(b[k])) or a[k] == pytest.approx(b[k])


@given(st.integers(1, 500), counts, counts, counts)
def test_f1_between_means(tp, fp, fn, tn):
    m = performance_metrics(Confusion(tp, fp, fn, tn))
    r, p = m["recall"], m["precision"]
    assert min(r, p) - 1e-12 <= m["f1"] <= math.sqrt(r * p) + 1e-12 <= (r + p) / 2 + 2e-12
    for v in m.values():
        assert math.isnan(v) or 0 <= v <= 1


# ---------------------------------------------------------------- rank sum


def test_exact_small_example():
    assert wilcoxon_rank_sum([1, 2], [3, 4]) == pytest.approx(1 / 3)


def test_identical_samples_large():
    a = np.arange(20.0)
    assert wilcoxon_rank_sum(a, a) >= 0.99


def test_identical_samples_exact():
    assert wilcoxon_rank_sum([1, 2, 3], [1, 2, 3]) == 1.0


def test_large_shift():
    r = np.random.default_rng(0)
    a = r.standard_normal(20)
    assert wilcoxon_rank_sum(a, a + 1000) < 1e-5


def test_all_tied_is_one():
    assert wilcoxon_rank_sum(np.zeros(10), np.zeros(10)) == 1.0


def test_exact_matches_scipy_without_ties():
    from scipy import stats

    a, b = [0.3, 1.2, 2.5, 0.1], [3.3, 0.9, 4.1, 5.0, 2.2]
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact").pvalue
    assert wilcoxon_rank_sum(a, b) == pytest.approx(ref, rel=1e-12)


def test_normal_path_matches_hand_formula():
    r = np.random.default_rng(1)
    a = r.integers(0, 6, 15).astype(float)
    b = r.integers(2, 8, 12).astype(float)
    from scipy.stats import norm, rankdata

    ranks = rankdata(np.r_[a, b])
    n1, n2 = len(a), len(b)
    n = n1 + n2
    U = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    _, t = np.unique(np.r_[a, b], return_counts=True)
    var = n1 * n2 / 12 * ((n + 1) - (t**3 - t).sum() / (n * (n - 1)))
    z = (abs(U - n1 * n2 / 2) - 0.5) / math.sqrt(var)
    assert wilcoxon_rank_sum(a, b) == pytest.approx(2 * norm.sf(z), rel=1e-10)


def test_rank_sum_needs_data():
    with pytest.raises(ValueError):
        wilcoxon_rank_sum([], [1.0])


samples = st.lists(st.integers(-100, 100), min_size=1, max_size=12)


@given(samples, samples)
def test_rank_sum_monotone_invariance(a, b):
    # exact in floating point on integers, so ties are preserved
    f = lambda v: np.asarray(v, float) ** 3 + 2 * np.asarray(v, float)  # noqa: E731
    assert wilcoxon_rank_sum(a, b) == pytest.approx(wilcoxon_rank_sum(f(a), f(b)), abs=1e-12)


@given(samples, samples)
def test_rank_sum_symmetric_and_valid(a, b):
    p = wilcoxon_rank_sum(a, b)
    assert 0 <= p <= 1
    assert p == pytest.approx(wilcoxon_rank_sum(b, a), abs=1e-12)


# ---------------------------------------------------------------- BH


def test_bh_all_zero():
    assert bh_adjust([0, 0, 0], 0.2) == {0, 1, 2}


def test_bh_all_one():
    assert bh_adjust([1, 1, 1], 0.2) == set()


def test_bh_example():
    assert bh_adjust([0.01, 0.02, 0.20, 0.90], 0.2) == {0, 1}


def test_bh_step_up():
    # p_(2) = 0.09 exceeds 2q/6 but p_(3) = 0.1 <= 3q/6, so the three smallest pass
    assert bh_adjust([0.1, 0.09, 0.005, 0.9, 0.8, 0.7], 0.2) == {0, 1, 2}


def test_bh_rejects_bad_p():
    with pytest.raises(ValueError):
        bh_adjust([0.1, 1.2], 0.2)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.data())
def test_bh_monotone(p, data):
    i = data.draw(st.integers(0, len(p) - 1))
    lower = data.draw(st.floats(0, p[i]))
    assume(lower <= p[i])
    q = list(p)
    q[i] = lower
    assert bh_adjust(p, 0.2) <= bh_adjust(q, 0.2)
