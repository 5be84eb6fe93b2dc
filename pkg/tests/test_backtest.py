import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrcsm.backtest import (
    BacktestConfig,
    decile_membership,
    decile_returns,
    equity_curve,
    period_returns,
    portfolio_return,
    rank_scores,
    rescale_rolling,
    rescale_to_target,
    run_backtest,
    select,
    weighted_return,
)
from ltrcsm.market_data import VolEstimate, month_end_calendar, panel_volatility, synthetic_panel
from ltrcsm.metrics import annualized_volatility, financial_summary
from ltrcsm.rankers import heuristic_model, score
from ltrcsm.tuning import PanelContext

from conftest import make_panel


def test_rank_scores_examples():
    np.testing.assert_array_equal(rank_scores([3.0, 1.0, 2.0]), [3, 1, 2])
    np.testing.assert_array_equal(rank_scores(np.zeros(4), [7, 2, 5, 1]), [4, 2, 3, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=80))
def test_rank_scores_is_permutation(vals):
    z = rank_scores(vals)
    assert sorted(z.tolist()) == list(range(1, len(vals) + 1))
    s = np.array(vals)
    for i in range(len(s)):
        assert z[i] == 1 + np.sum(s < s[i]) + np.sum((s == s[i]) & (np.arange(len(s)) < i))


def test_select_sizes_and_fallback():
    rng = np.random.default_rng(0)
    x = select(rank_scores(rng.normal(size=1000)), 100)
    assert (x == 1).sum() == 100 and (x == -1).sum() == 100 and (x == 0).sum() == 800
    x = select(rank_scores(rng.normal(size=150)), 100)
    assert (x == 1).sum() == 15 and (x == -1).sum() == 15
    with pytest.raises(ValueError):
        select(rank_scores(rng.normal(size=19)), 5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-10**4, 10**4), min_size=20, max_size=120, unique=True),
       st.integers(1, 30))
def test_select_order_and_monotone_invariance(vals, n_side):
    s = np.array(vals, dtype=float)
    x = select(rank_scores(s), n_side)
    assert s[x == 1].min() > s[x == -1].max()
    for f in (lambda v: 3 * v + 1, lambda v: v ** 3):
        np.testing.assert_array_equal(x, select(rank_scores(f(s)), n_side))


def test_portfolio_return_hand_value():
    r = portfolio_return([1, -1], [0.15, 0.30], [0.02, -0.01], 0.15)
    assert r == pytest.approx(0.0125, abs=1e-15)
    assert portfolio_return([0, 1, -1, 0], [0.2] * 4, [0.5, 0.0, 0.0, -0.3]) == 0.0
    a = portfolio_return([1, -1, 1], [0.1, 0.2, 0.3], [0.01, 0.03, -0.02], 0.15)
    assert portfolio_return([1, -1, 1], [0.1, 0.2, 0.3], [0.01, 0.03, -0.02], 0.30) == pytest.approx(2 * a)
    assert portfolio_return([-1, 1, -1], [0.1, 0.2, 0.3], [0.01, 0.03, -0.02], 0.15) == pytest.approx(-a)


def test_portfolio_return_drops_missing(caplog):
    r = portfolio_return([1, -1, 1], [0.15, np.nan, 0.15], [0.02, 0.01, 0.04])
    assert r == pytest.approx(0.03)
    assert "dropped 1" in caplog.text
    with pytest.raises(ValueError):
        portfolio_return([0, 0], [0.1, 0.1], [0.0, 0.0])


def test_decile_membership_sizes():
    z = rank_scores(np.random.default_rng(0).normal(size=20))
    assert np.bincount(decile_membership(z), minlength=11)[1:].tolist() == [2] * 10
    for n in (23, 57, 199):
        z = np.arange(1, n + 1)
        d = decile_membership(z)
        assert (d == 10).sum() == math.ceil(n / 10)
        assert np.all(np.diff(d) >= 0) and d.min() == 1


def test_decile_partition_and_selection_identities():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(20, 300))
        s, vol, r = rng.normal(size=n), rng.uniform(0.1, 0.6, n), rng.normal(0, 0.08, n)
        z = rank_scores(s)
        dec = decile_returns(z, vol, r, 0.15)
        sizes = np.bincount(decile_membership(z), minlength=11)[1:]
        total = np.sum(0.15 / vol * r)
        assert np.sum(sizes * dec) == pytest.approx(total, abs=1e-12)
        x = select(z, 10)
        assert weighted_return(x, vol, r) == pytest.approx(portfolio_return(x, vol, r), abs=1e-15)
        # signed indicator over top and bottom selections, averaged
        d = x.astype(float)
        eq12 = np.sum(d * 0.15 / vol * r) / np.count_nonzero(d)
        assert portfolio_return(x, vol, r) == pytest.approx(eq12, abs=1e-12)


def test_rescale_to_target():
    rng = np.random.default_rng(2)
    r = rng.normal(0.01, 0.05, 240)
    out, k = rescale_to_target(r, 0.15)
    assert annualized_volatility(out) == pytest.approx(0.15, abs=1e-9)
    again, k2 = rescale_to_target(out, 0.15)
    np.testing.assert_allclose(again, out, atol=1e-9)
    base = r / annualized_volatility(r) * 0.30
    halved, k3 = rescale_to_target(base, 0.15)
    np.testing.assert_allclose(halved, base / 2, rtol=1e-12)
    assert financial_summary(out).sharpe == pytest.approx(financial_summary(r).sharpe, abs=1e-9)
    with pytest.raises(ValueError):
        rescale_to_target(np.full(24, 0.01))


def test_rolling_rescale_uses_only_past():
    r = np.random.default_rng(3).normal(0, 0.05, 60)
    a = rescale_rolling(r)
    b_in = r.copy()
    b_in[40:] *= 10
    b = rescale_rolling(b_in)
    np.testing.assert_array_equal(a[:40], b[:40])
    assert np.isnan(a[:12]).all() and np.isfinite(a[12:]).all()


def test_period_returns_last_valid_price():
    close = np.array([[10.0, 10.0], [11.0, 12.0], [12.0, np.nan], [13.0, np.nan]])
    panel = make_panel(close)
    np.testing.assert_allclose(period_returns(panel, 0, 3, [0, 1]), [0.3, 0.2])


def _hand_fixture():
    n_days, n_assets = 45, 20
    rng = np.random.default_rng(7)
    close = np.full((n_days, n_assets), 50.0)
    cal_probe = make_panel(close, start="2021-01-25")
    cal = month_end_calendar(cal_probe)  # Jan 29, Feb 26, Mar 26 (last day)
    t0, t1 = int(cal[0]), int(cal[1])
    growth = rng.uniform(-0.1, 0.1, n_assets)
    close[t0 + 1:] = 50.0 * (1 + growth)
    panel = make_panel(close, start="2021-01-25")
    sig = rng.uniform(0.1, 0.4, n_assets)
    vol = VolEstimate(panel.dates, panel.assets, np.tile(sig, (n_days, 1)), 63)
    scores = rng.normal(size=n_assets)
    return panel, vol, cal, t0, t1, growth, sig, scores


def test_run_backtest_hand_computation():
    panel, vol, cal, t0, t1, growth, sig, scores = _hand_fixture()
    assets = np.arange(20)
    res = run_backtest(panel, vol, {t0: (assets, scores)}, BacktestConfig(n_side=2, k=5))
    top = np.argsort(scores)[-2:]
    bot = np.argsort(scores)[:2]
    expect = (np.sum(0.15 / sig[top] * growth[top]) - np.sum(0.15 / sig[bot] * growth[bot])) / 4
    assert len(res.returns) == 1
    assert res.raw.iloc[0] == pytest.approx(expect, abs=1e-14)
    assert res.returns["date"].iloc[0] == np.datetime64("2021-01-29")
    assert len(res.positions) == 4
    assert set(res.positions["X"]) == {1, -1}
    assert list(res.positions.columns) == ["date", "asset", "X", "sigma", "score", "rank"]
    # the last calendar rebalance has no following month
    res2 = run_backtest(panel, vol, {t0: (assets, scores), int(cal[-1]): (assets, scores)},
                        BacktestConfig(n_side=2, k=5))
    assert len(res2.returns) == 1


@pytest.fixture(scope="module")
def zero_drift():
    panel = synthetic_panel(100, 8, 0.0, seed=3)
    return panel, PanelContext(panel)


def _all_scores(ctx, model, start=300):
    out = {}
    for t in ctx.calendar:
        t = int(t)
        if t < start:
            continue
        assets, X = ctx.cross_section(t)
        if len(assets) >= 20:
            out[t] = (assets, score(model, X, ctx.panel.dates[t]))
    return out


def test_random_backtest_on_zero_signal_panel(zero_drift):
    panel, ctx = zero_drift
    scores = _all_scores(ctx, heuristic_model("rand", 5))
    res = run_backtest(panel, ctx.vol, scores, BacktestConfig(n_side=10, k=10), ctx.calendar)
    r = res.raw.to_numpy()
    assert len(r) == len(scores) - 1
    assert abs(r.mean()) < 2 * r.std(ddof=1) / math.sqrt(len(r))
    held = res.positions.groupby("date").size()
    assert (held == 20).all()
    assert annualized_volatility(res.rescaled) == pytest.approx(0.15, abs=1e-9)
    eq = equity_curve(res.rescaled)
    assert eq[0] == 1.0 and eq[-1] == pytest.approx(np.prod(1 + res.rescaled))


def test_oracle_scores_give_monotone_deciles():
    panel = synthetic_panel(100, 8, 1.0, seed=4)
    ctx = PanelContext(panel)
    cal = ctx.calendar
    nxt = dict(zip(cal[:-1].tolist(), cal[1:].tolist()))
    scores = {}
    for t in cal[:-1]:
        t = int(t)
        if t < 300:
            continue
        assets, _ = ctx.cross_section(t)
        if len(assets) < 20:
            continue
        scores[t] = (assets, period_returns(panel, t, nxt[t], assets))
    res = run_backtest(panel, ctx.vol, scores, BacktestConfig(n_side=10, k=10), cal)
    means = res.deciles.mean().to_numpy()
    assert np.all(np.diff(means) > 0)
    assert res.ranking_monthly["kendall_tau"].mean() > 0.99
