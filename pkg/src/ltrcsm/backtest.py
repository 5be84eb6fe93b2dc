"""Scores to portfolios: ranking, long/short selection, volatility-scaled
monthly returns, decile portfolios and portfolio-level rescaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .labeling import decile_grades
from .market_data import PricePanel, VolEstimate, month_end_calendar
from .metrics import annualized_volatility, ranking_summary

logger = logging.getLogger(__name__)

N_DECILES = 10
MIN_UNIVERSE = 20
VOL_TARGET = 0.15


def rank_scores(scores, ids=None) -> np.ndarray:
    """1-based ascending-score positions; ties go to the smaller asset id first."""
    scores = np.asarray(scores, dtype=float)
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, scores))
    z = np.empty(len(scores), dtype=np.int64)
    z[order] = np.arange(1, len(scores) + 1)
    return z


def side_size(n: int, n_side: int = 100) -> int:
    """Positions per side: ``n_side`` when the universe allows, else the top/bottom 10%."""
    if n < MIN_UNIVERSE:
        raise ValueError(f"universe of {n} assets is too small to form portfolios (need {MIN_UNIVERSE})")
    if n >= 2 * n_side:
        return n_side
    return int(np.floor(0.1 * n))


def select(z, n_side: int = 100) -> np.ndarray:
    """Positions in {-1, 0, +1}: the highest ranks long, the lowest short."""
    z = np.asarray(z)
    m = side_size(len(z), n_side)
    x = np.zeros(len(z), dtype=np.int64)
    x[z > len(z) - m] = 1
    x[z <= m] = -1
    return x


def decile_membership(z) -> np.ndarray:
    """Decile 1..10 of each rank; decile 10 holds the top ``ceil(N/10)`` scores."""
    z = np.asarray(z)
    n = len(z)
    return N_DECILES - ((n - z) * N_DECILES) // n


def _scaled(vol, returns, vol_target):
    return vol_target / np.asarray(vol, dtype=float) * np.asarray(returns, dtype=float)


def _usable(vol, returns):
    vol, returns = np.asarray(vol, dtype=float), np.asarray(returns, dtype=float)
    return np.isfinite(vol) & (vol > 0) & np.isfinite(returns)


def portfolio_return(positions, vol, returns, vol_target: float = VOL_TARGET) -> float:
    """Equal-weight average of ``X * (vol_target / sigma) * r`` over held positions.

    Held assets lacking a volatility or return are dropped with a warning.
    """
    x = np.asarray(positions, dtype=float)
    held = x != 0
    ok = held & _usable(vol, returns)
    if ok.sum() < held.sum():
        logger.warning("dropped %d held assets with missing volatility or return", int(held.sum() - ok.sum()))
    n = int(ok.sum())
    if n == 0:
        raise ValueError("no held positions")
    return float(np.sum(x[ok] * _scaled(np.asarray(vol)[ok], np.asarray(returns)[ok], vol_target)) / n)


def weighted_return(indicator, vol, returns, vol_target: float = VOL_TARGET) -> float:
    """Average scaled return over assets with nonzero (possibly signed) indicator."""
    return portfolio_return(indicator, vol, returns, vol_target)


def decile_returns(z, vol, returns, vol_target: float = VOL_TARGET) -> np.ndarray:
    """Scaled return of each score decile (index 0 is decile 1, the lowest scores)."""
    d = decile_membership(z)
    ok = _usable(vol, returns)
    out = np.full(N_DECILES, np.nan)
    contrib = _scaled(np.where(ok, vol, 1.0), np.where(ok, returns, 0.0), vol_target)
    for k in range(1, N_DECILES + 1):
        m = (d == k) & ok
        if m.any():
            out[k - 1] = contrib[m].mean()
    return out


def rescale_to_target(returns, vol_target: float = VOL_TARGET) -> tuple[np.ndarray, float]:
    """Scale the whole monthly series to ``vol_target`` annualized volatility."""
    r = np.asarray(returns, dtype=float)
    realized = annualized_volatility(r)
    if not np.isfinite(realized) or realized <= 0:
        raise ValueError("cannot rescale a series with zero realized volatility")
    k = vol_target / realized
    return r * k, k


def rescale_rolling(returns, vol_target: float = VOL_TARGET, window: int = 36, min_periods: int = 12) -> np.ndarray:
    """Scale month m by the vol of the trailing months before it (NaN until ``min_periods``)."""
    s = pd.Series(np.asarray(returns, dtype=float))
    past = s.rolling(window, min_periods=min_periods).std(ddof=1).shift(1) * np.sqrt(12)
    return (s * vol_target / past).to_numpy()


def period_returns(panel: PricePanel, t0: int, t1: int, assets) -> np.ndarray:
    """Price-ratio return from ``t0`` to the last valid price in ``(t0, t1]``."""
    assets = np.asarray(assets, dtype=np.int64)
    p0 = panel.close[t0, assets]
    window = panel.close[t0 + 1:t1 + 1, assets]
    valid = np.isfinite(window)
    last = np.where(valid.any(axis=0), window.shape[0] - 1 - np.argmax(valid[::-1], axis=0), -1)
    p1 = np.where(last >= 0, window[np.maximum(last, 0), np.arange(len(assets))], np.nan)
    return p1 / p0 - 1.0


@dataclass(frozen=True)
class BacktestConfig:
    n_side: int = 100
    vol_target: float = VOL_TARGET
    k: int = 100
    rescale: str = "expost"

    def __post_init__(self):
        if self.rescale not in ("expost", "rolling"):
            raise ValueError("rescale must be 'expost' or 'rolling'")
        if self.n_side < 1 or self.vol_target <= 0 or self.k < 1:
            raise ValueError("n_side, vol_target and k must be positive")


@dataclass
class BacktestResult:
    returns: pd.DataFrame
    positions: pd.DataFrame
    ranking_monthly: pd.DataFrame
    scale: float = np.nan
    meta: dict = field(default_factory=dict)

    @property
    def raw(self) -> pd.Series:
        return self.returns["raw"]

    @property
    def rescaled(self) -> pd.Series:
        return self.returns["rescaled"]

    @property
    def deciles(self) -> pd.DataFrame:
        return self.returns[[f"decile_{d}" for d in range(1, N_DECILES + 1)]]


RETURN_COLUMNS = ["date", "raw", "rescaled"] + [f"decile_{d}" for d in range(1, N_DECILES + 1)]
POSITION_COLUMNS = ["date", "asset", "X", "sigma", "score", "rank"]


def run_backtest(panel: PricePanel, vol: VolEstimate, scores: dict, config: BacktestConfig = BacktestConfig(),
                 calendar=None) -> BacktestResult:
    """Monthly long/short and decile returns from per-rebalance scores.

    ``scores`` maps a rebalance index to ``(asset_indices, scores)``. The
    return for rebalance ``t`` runs to the next calendar rebalance, so the last
    rebalance of the panel contributes no return.
    """
    cal = month_end_calendar(panel) if calendar is None else np.asarray(calendar)
    nxt = {int(a): int(b) for a, b in zip(cal[:-1], cal[1:])}
    rows, pos_rows, months = [], [], []
    for t in sorted(scores):
        if t not in nxt:
            continue
        assets, y = scores[t]
        assets, y = np.asarray(assets, dtype=np.int64), np.asarray(y, dtype=float)
        date = panel.dates[t]
        try:
            z = rank_scores(y, assets)
            x = select(z, config.n_side)
        except ValueError as exc:
            raise ValueError(f"rebalance {date}: {exc}") from exc
        sigma = vol.annual[t, assets]
        r = period_returns(panel, t, nxt[t], assets)
        raw = portfolio_return(x, sigma, r, config.vol_target)
        rows.append([date, raw, np.nan, *decile_returns(z, sigma, r, config.vol_target)])
        held = np.flatnonzero(x)
        held = held[np.argsort(-z[held], kind="stable")]
        for i in held:
            pos_rows.append([date, panel.assets[assets[i]], int(x[i]), float(sigma[i]), float(y[i]), int(z[i])])
        ok = np.isfinite(r)
        if ok.sum() >= N_DECILES:
            months.append((date, y[ok], r[ok], decile_grades(r[ok], assets[ok])))
    returns = pd.DataFrame(rows, columns=RETURN_COLUMNS)
    scale = np.nan
    if len(returns) >= 2:
        if config.rescale == "expost":
            returns["rescaled"], scale = rescale_to_target(returns["raw"], config.vol_target)
        else:
            returns["rescaled"] = rescale_rolling(returns["raw"], config.vol_target)
    positions = pd.DataFrame(pos_rows, columns=POSITION_COLUMNS)
    _, monthly = ranking_summary(months, config.k)
    return BacktestResult(returns, positions, monthly, scale)


def equity_curve(returns) -> np.ndarray:
    """Compounded wealth starting at 1 (length = months + 1)."""
    return np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])
