"""Daily price panels, rebalance calendar, returns, ex-ante volatility and the
eligible universe at each rebalance.

Missing prices are represented as ``NaN`` throughout. All arrays are laid out
``(n_dates, n_assets)``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .rng import stream

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
MONTH_DAYS = 21
MAX_FFILL_DAYS = 5


class PanelError(ValueError):
    """Raised for malformed or invalid price input."""


@dataclass(frozen=True)
class PricePanel:
    dates: np.ndarray  # datetime64[D], strictly increasing
    assets: tuple[str, ...]
    close: np.ndarray  # float64 (n_dates, n_assets), NaN = missing

    def __post_init__(self):
        if self.close.shape != (len(self.dates), len(self.assets)):
            raise PanelError(f"close shape {self.close.shape} does not match "
                             f"{len(self.dates)} dates x {len(self.assets)} assets")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates.astype("int64")) > 0):
            raise PanelError("dates must be strictly increasing")
        present = self.close[np.isfinite(self.close)]
        if np.any(present <= 0):
            raise PanelError("prices must be strictly positive")

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def asset_index(self, asset: str) -> int:
        return self.assets.index(asset)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.close, index=pd.DatetimeIndex(self.dates), columns=list(self.assets))


@dataclass(frozen=True)
class ReturnsPanel:
    """Daily simple returns aligned to ``panel.dates[1:]``."""

    dates: np.ndarray
    assets: tuple[str, ...]
    values: np.ndarray  # (n_dates - 1, n_assets)


@dataclass(frozen=True)
class VolEstimate:
    """Annualized ex-ante volatility; ``annual[t]`` uses returns up to ``dates[t]``."""

    dates: np.ndarray
    assets: tuple[str, ...]
    annual: np.ndarray
    span: int = 63

    @property
    def daily(self) -> np.ndarray:
        return self.annual / np.sqrt(TRADING_DAYS)

    @property
    def monthly(self) -> np.ndarray:
        return self.daily * np.sqrt(MONTH_DAYS)


@dataclass(frozen=True)
class UniverseSnapshot:
    t: int
    assets: np.ndarray  # column indices into the panel, ascending

    @property
    def n(self) -> int:
        return len(self.assets)


# ---------------------------------------------------------------------------
# ingestion


def _forward_fill_short_gaps(close: np.ndarray, max_gap: int = MAX_FFILL_DAYS) -> np.ndarray:
    out = close.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        valid = np.flatnonzero(np.isfinite(col))
        if len(valid) == 0:
            continue
        first, last = valid[0], valid[-1]
        t = first
        while t <= last:
            if np.isfinite(col[t]):
                t += 1
                continue
            end = t
            while not np.isfinite(col[end]):
                end += 1
            if end - t <= max_gap:
                col[t:end] = col[t - 1]
            t = end
    return out


def panel_from_long(rows, *, max_gap: int = MAX_FFILL_DAYS) -> PricePanel:
    """Build a panel from ``(date, asset, close)`` triples (dates as ``datetime.date``)."""
    seen = {}
    for date, asset, price in rows:
        key = (date, asset)
        if key in seen:
            raise PanelError(f"duplicate row for date={date} asset={asset}")
        seen[key] = price
    if not seen:
        raise PanelError("no price rows")
    dates = sorted({d for d, _ in seen})
    assets = sorted({a for _, a in seen})
    d_idx = {d: i for i, d in enumerate(dates)}
    a_idx = {a: j for j, a in enumerate(assets)}
    close = np.full((len(dates), len(assets)), np.nan)
    for (d, a), p in seen.items():
        close[d_idx[d], a_idx[a]] = p
    close = _forward_fill_short_gaps(close, max_gap)
    return PricePanel(np.array(dates, dtype="datetime64[D]"), tuple(assets), close)


def load_prices(path, *, max_gap: int = MAX_FFILL_DAYS) -> PricePanel:
    """Read a long-format ``date,asset,close`` CSV into a :class:`PricePanel`."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "asset", "close"]:
            raise PanelError(f"{path}: expected header 'date,asset,close', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 3:
                raise PanelError(f"{path}:{lineno}: expected 3 fields, got {len(rec)}")
            try:
                date = dt.date.fromisoformat(rec[0].strip())
                asset = rec[1].strip()
                price = float(rec[2])
            except ValueError as exc:
                raise PanelError(f"{path}:{lineno}: {exc}") from None
            if not asset:
                raise PanelError(f"{path}:{lineno}: empty asset id")
            if not np.isfinite(price) or price <= 0:
                raise PanelError(f"{path}:{lineno}: non-positive or non-finite price {rec[2]!r}")
            rows.append((date, asset, price))
    return panel_from_long(rows, max_gap=max_gap)


def write_prices(panel: PricePanel, path) -> None:
    """Write the panel in long format, sorted by date then asset; missing cells are skipped."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset", "close"])
        for i, d in enumerate(panel.dates):
            ds = str(d)
            for j, a in enumerate(panel.assets):
                p = panel.close[i, j]
                if np.isfinite(p):
                    w.writerow([ds, a, repr(float(p))])


# ---------------------------------------------------------------------------
# calendar and returns


def month_end_calendar(panel: PricePanel) -> np.ndarray:
    """Indices of the last trading day of every (year, month) in the panel."""
    if panel.n_dates == 0:
        raise PanelError("empty panel")
    months = panel.dates.astype("datetime64[M]")
    last = np.flatnonzero(months[1:] != months[:-1])
    return np.append(last, panel.n_dates - 1).astype(int)


def daily_returns(panel: PricePanel) -> ReturnsPanel:
    c = panel.close
    r = c[1:] / c[:-1] - 1.0
    return ReturnsPanel(panel.dates[1:], panel.assets, r)


def cumulative_return(panel: PricePanel, asset, t: int, window: int) -> float:
    j = asset if isinstance(asset, (int, np.integer)) else panel.asset_index(asset)
    if t - window < 0 or t >= panel.n_dates:
        return np.nan
    return float(panel.close[t, j] / panel.close[t - window, j] - 1.0)


def cumulative_returns(close: np.ndarray, window: int) -> np.ndarray:
    """Vectorized ``p_t / p_{t-window} - 1``; NaN where history is short."""
    out = np.full_like(close, np.nan)
    out[window:] = close[window:] / close[:-window] - 1.0
    return out


def ewm_volatility(returns: ReturnsPanel, span: int = 63, min_periods: int = 21) -> VolEstimate:
    """Annualized exponentially weighted std of daily returns.

    Uses bias-corrected weights over all available history (decay
    ``alpha = 2 / (span + 1)``); values are emitted once ``min_periods``
    returns have been seen. Rows align with ``returns.dates``; use
    :func:`panel_volatility` for rows aligned with the price panel.
    """
    if span < 2:
        raise ValueError("span must be >= 2")
    frame = pd.DataFrame(returns.values)
    sd = frame.ewm(span=span, adjust=True, min_periods=min_periods).std().to_numpy()
    return VolEstimate(returns.dates, returns.assets, sd * np.sqrt(TRADING_DAYS), span)


def panel_volatility(panel: PricePanel, span: int = 63, min_periods: int = 21) -> VolEstimate:
    """Volatility aligned to the panel calendar (row 0, which has no return, is NaN)."""
    v = ewm_volatility(daily_returns(panel), span, min_periods)
    annual = np.vstack([np.full((1, panel.n_assets), np.nan), v.annual])
    return VolEstimate(panel.dates, panel.assets, annual, span)


def eligible_universe(panel: PricePanel, vol: VolEstimate, t: int, *,
                      price_floor: float = 1.0, lookback: int = TRADING_DAYS) -> UniverseSnapshot:
    """Assets trading above ``price_floor`` at ``t`` with a full year of valid prices and a valid vol."""
    if t < lookback:
        return UniverseSnapshot(t, np.array([], dtype=int))
    window = panel.close[t - lookback: t + 1]
    ok = np.all(np.isfinite(window), axis=0)
    ok &= panel.close[t] > price_floor
    ok &= np.isfinite(vol.annual[t])
    members = np.flatnonzero(ok)
    if len(members) == 0:
        logger.warning("empty universe at %s", panel.dates[t])
    return UniverseSnapshot(t, members)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_panel(n_assets: int = 200, n_years: int = 20, signal_strength: float = 1.0,
                    seed: int = 0, *, start: str = "1990-01-01",
                    drift_std: float = 0.0015, drift_halflife: float = 150.0,
                    vol_range: tuple[float, float] = (0.006, 0.012),
                    market_vol: float = 0.008) -> PricePanel:
    """Geometric random walks with a planted, persistent momentum drift.

    Each asset's daily log-return is ``signal_strength * mu_t + beta * m_t +
    eps_t`` where ``mu`` is an AR(1) latent drift with stationary std
    ``drift_std`` and half-life ``drift_halflife`` days, ``m`` is a common
    zero-mean market shock and ``eps`` idiosyncratic noise. Past returns
    therefore predict future returns in proportion to ``signal_strength``.
    The calendar is ``252 * n_years`` consecutive weekdays from ``start``.
    """
    if n_assets < 20:
        raise ValueError("n_assets must be >= 20")
    if n_years < 2:
        raise ValueError("n_years must be >= 2")
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError("signal_strength must lie in [0, 1]")
    n_days = TRADING_DAYS * n_years
    dates = pd.bdate_range(start=start, periods=n_days).to_numpy().astype("datetime64[D]")

    rng = stream(seed, "data")
    rho = 0.5 ** (1.0 / drift_halflife)
    idio = rng.uniform(vol_range[0], vol_range[1], n_assets)
    beta = rng.uniform(0.5, 1.5, n_assets)
    mu0 = rng.normal(0.0, drift_std, n_assets)
    innov = rng.normal(0.0, drift_std * np.sqrt(1.0 - rho ** 2), (n_days, n_assets))
    innov[0] = mu0
    mu = lfilter([1.0], [1.0, -rho], innov, axis=0)
    market = rng.normal(0.0, market_vol, n_days)
    eps = rng.normal(size=(n_days, n_assets)) * idio
    var = idio ** 2 + (beta * market_vol) ** 2
    logret = signal_strength * mu + beta * market[:, None] + eps - 0.5 * var
    logret[0] = 0.0
    start_px = np.exp(rng.uniform(np.log(40.0), np.log(400.0), n_assets))
    close = start_px * np.exp(np.cumsum(logret, axis=0))
    width = max(3, len(str(n_assets - 1)))
    assets = tuple(f"A{j:0{width}d}" for j in range(n_assets))
    return PricePanel(dates, assets, close)
