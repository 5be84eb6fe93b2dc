import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ltrcsm.metrics import (
    PERFORMANCE_LABELS,
    downside_deviation,
    financial_summary,
    kendall_tau,
    max_drawdown,
    max_drawdown_from_equity,
    ndcg_at_k,
    ranking_summary,
)

from reported_values import REPORTED_PERFORMANCE


def kendall_oracle(x, y):
    """Tau-b by O(n^2) pair counting."""
    n = len(x)
    c = d = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = np.sign(x[i] - x[j])
            b = np.sign(y[i] - y[j])
            if a == 0 and b == 0:
                continue
            if a == 0:
                tx += 1
            elif b == 0:
                ty += 1
            elif a == b:
                c += 1
            else:
                d += 1
    return (c - d) / math.sqrt((c + d + tx) * (c + d + ty))


def ndcg_oracle(scores, grades, k):
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    k = min(k, n)
    dcg = sum((2.0 ** grades[order[p]] - 1) / math.log2(p + 2) for p in range(k))
    ideal = sorted(grades, reverse=True)
    idcg = sum((2.0 ** ideal[p] - 1) / math.log2(p + 2) for p in range(k))
    return dcg / idcg if idcg > 0 else 0.0


def mdd_oracle(equity):
    best = 0.0
    for i in range(len(equity)):
        for j in range(i, len(equity)):
            best = max(best, 1 - equity[j] / equity[i])
    return best


def test_mdd_example_and_brute_force():
    assert max_drawdown_from_equity([1, 1.2, 0.9, 1.1]) == pytest.approx(0.25)
    rng = np.random.default_rng(0)
    for _ in range(50):
        r = rng.normal(0.01, 0.05, 30)
        eq = np.concatenate([[1.0], np.cumprod(1 + r)])
        assert max_drawdown(r) == pytest.approx(mdd_oracle(eq), abs=1e-12)


def test_financial_summary_definitions():
    rng = np.random.default_rng(1)
    r = rng.normal(0.01, 0.04, 120)
    fs = financial_summary(r)
    assert fs.expected_return == pytest.approx(12 * r.mean())
    assert fs.volatility == pytest.approx(np.std(r, ddof=1) * math.sqrt(12))
    assert fs.sharpe == pytest.approx(fs.expected_return / fs.volatility, abs=1e-9)
    neg = np.minimum(r, 0)
    assert fs.downside_deviation == pytest.approx(math.sqrt(12 * np.mean(neg ** 2)))
    assert fs.sortino == pytest.approx(fs.expected_return / fs.downside_deviation, abs=1e-9)
    assert fs.calmar == pytest.approx(fs.expected_return / fs.max_drawdown, abs=1e-9)
    assert fs.pct_positive == pytest.approx(np.mean(r > 0))
    assert fs.profit_loss_ratio == pytest.approx(r[r > 0].mean() / abs(r[r < 0].mean()))
    assert list(fs.as_row()) == list(PERFORMANCE_LABELS.values())


def test_financial_summary_edge_cases():
    with pytest.raises(ValueError):
        financial_summary(np.full(11, 0.01))
    fs = financial_summary(np.linspace(0.01, 0.02, 12))
    assert fs.sortino == math.inf and fs.calmar == math.inf and fs.max_drawdown == 0


@pytest.mark.parametrize("name", list(REPORTED_PERFORMANCE))
def test_reported_table_ratios_are_consistent(name):
    e, vol, sharpe, dd, mdd, sortino, calmar = REPORTED_PERFORMANCE[name]
    assert abs(e / vol - sharpe) <= 0.05
    assert abs(e / dd - sortino) <= 0.05
    assert abs(e / mdd - calmar) <= 0.05


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.2, 0.3), min_size=12, max_size=60))
def test_financial_invariants(vals):
    r = np.array(vals)
    assume(np.std(r) > 1e-6)
    fs = financial_summary(r)
    assert 0 <= fs.max_drawdown < 1
    if r.mean() >= 0:
        assert fs.downside_deviation <= fs.volatility + 1e-12
    k = 2.5
    assert financial_summary(k * r).sharpe == pytest.approx(fs.sharpe, rel=1e-9, abs=1e-12)


def test_downside_deviation_can_exceed_vol_for_losing_series():
    r = np.full(24, -0.05)
    r[::2] = -0.04
    assert downside_deviation(r) > np.std(r, ddof=1) * math.sqrt(12)


def test_kendall_examples_and_oracle():
    x = np.arange(10.0)
    assert kendall_tau(x, x) == pytest.approx(1.0)
    assert kendall_tau(x, -x) == pytest.approx(-1.0)
    rng = np.random.default_rng(2)
    for _ in range(40):
        a = rng.integers(0, 8, 50).astype(float)
        b = rng.normal(size=50).round(1)
        assert kendall_tau(a, b) == pytest.approx(kendall_oracle(a, b), abs=1e-12)
        assert kendall_tau(a, b) == pytest.approx(kendall_tau(b, a), abs=1e-15)


def test_ndcg_worked_example():
    scores = np.array([1.0, 3.0, 2.0])   # predicted order: items 1, 2, 0
    grades = np.array([3, 0, 2])         # grades in predicted order: 0, 2, 3
    dcg = 3 / math.log2(3) + 7 / 2
    idcg = 7 + 3 / math.log2(3)
    assert dcg == pytest.approx(5.3928, abs=1e-4) and idcg == pytest.approx(8.8928, abs=1e-4)
    assert ndcg_at_k(scores, grades, 3) == pytest.approx(dcg / idcg, abs=1e-12)
    assert ndcg_at_k(scores, grades, 3) == pytest.approx(0.6064, abs=1e-4)


def test_ndcg_matches_oracle_on_random_lists():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 51))
        s = rng.normal(size=n).round(1)
        g = rng.integers(0, 10, n)
        for k in (1, 5, n):
            assert ndcg_at_k(s, g, k) == pytest.approx(ndcg_oracle(list(s), list(g), k), abs=1e-12)


def test_ndcg_sides_and_edge_cases():
    rng = np.random.default_rng(4)
    s, g = rng.normal(size=30), rng.integers(0, 10, 30)
    assert ndcg_at_k(s, g, 10, "short") == pytest.approx(ndcg_at_k(-s, 9 - g, 10, "long"))
    assert ndcg_at_k(g.astype(float), g, 10) == pytest.approx(1.0)
    assert ndcg_at_k(np.exp(s), g, 7) == pytest.approx(ndcg_at_k(s, g, 7))
    assert ndcg_at_k(s, np.zeros(30), 10) == 0.0
    assert ndcg_at_k(s, g, 500) == pytest.approx(ndcg_at_k(s, g, 30))
    with pytest.raises(ValueError):
        ndcg_at_k(s, g, 5, "middle")


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-10, 10), min_size=n, max_size=n),
    st.lists(st.integers(0, 9), min_size=n, max_size=n))), st.integers(1, 50))
def test_ndcg_bounded(data, k):
    v = ndcg_at_k(np.array(data[0]), np.array(data[1]), k)
    assert 0.0 <= v <= 1.0 + 1e-12


def test_ranking_summary_perfect_and_random():
    rng = np.random.default_rng(5)
    perfect, random_ = [], []
    for m in range(200):
        realized = rng.normal(size=100)
        order = np.argsort(np.argsort(realized))
        grades = np.minimum(order * 10 // 100, 9)
        perfect.append((m, realized, realized, grades))
        random_.append((m, rng.random(100), realized, grades))
    summ, frame = ranking_summary(perfect, k=20)
    assert summ.kendall_tau == pytest.approx(1.0) and summ.ndcg_long == pytest.approx(1.0)
    assert summ.ndcg_short == pytest.approx(1.0)
    assert len(frame) == 200 and summ.n_months == 200
    rs, frame = ranking_summary(random_, k=20)
    assert abs(rs.kendall_tau) < 0.02
    assert rs.kendall_tau == pytest.approx(frame["kendall_tau"].mean())
    assert list(rs.as_row()) == ["Kendall's Tau", "NDCG@20 (Longs)", "NDCG@20 (Shorts)"]
    assert isinstance(frame, pd.DataFrame)
