"""Momentum predictors: raw and volatility-normalized returns, volatility
normalized MACD intermediates at several lags, and the composite MACD score.

Field order of the 22-dimensional vector (see :data:`FEATURE_NAMES`):

====  ==========================================================
 1-3  raw cumulative returns over 63, 126, 252 days
 4-6  returns over 63, 126, 252 days / (daily vol * sqrt(window))
7-21  MACD intermediate for (8,24), (16,48), (32,96), each at
      lags 0, 21, 63, 126, 252 days (pair-major)
  22  composite: sum of response(intermediate) over the 3 pairs
====  ==========================================================
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .market_data import PricePanel, UniverseSnapshot, VolEstimate, cumulative_returns

logger = logging.getLogger(__name__)

RETURN_WINDOWS = (63, 126, 252)
LAGS = (0, 21, 63, 126, 252)
PRICE_STD_WINDOW = 63
SIGNAL_STD_WINDOW = 252
CLIP = 5.0
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class MacdParams:
    short: tuple[int, ...] = (8, 16, 32)
    long: tuple[int, ...] = (24, 48, 96)
    price_std_window: int = PRICE_STD_WINDOW
    signal_std_window: int = SIGNAL_STD_WINDOW

    def __post_init__(self):
        if len(self.short) != len(self.long):
            raise ValueError("short and long scales must pair up")
        if any(s >= l for s, l in zip(self.short, self.long)):
            raise ValueError("each short scale must be below its long scale")

    @property
    def pairs(self):
        return list(zip(self.short, self.long))


def _feature_names(params: MacdParams = MacdParams()) -> tuple[str, ...]:
    names = [f"ret_{w}" for w in RETURN_WINDOWS]
    names += [f"nret_{w}" for w in RETURN_WINDOWS]
    names += [f"macd_{s}_{l}_lag{lag}" for s, l in params.pairs for lag in LAGS]
    names.append("baz")
    return tuple(names)


FEATURE_NAMES = _feature_names()
N_FEATURES = len(FEATURE_NAMES)
JT_COLUMN = FEATURE_NAMES.index("ret_252")
BAZ_COLUMN = FEATURE_NAMES.index("baz")


def half_life(scale: float) -> float:
    """Half-life in days of an EWMA with smoothing ``1/scale``."""
    if scale <= 1:
        raise ValueError(f"scale must exceed 1, got {scale}")
    return float(np.log(0.5) / np.log(1.0 - 1.0 / scale))


def ewma(close: np.ndarray, scale: float, min_periods: int = 0) -> np.ndarray:
    """Exponentially weighted price average with decay ``1 - 1/scale`` per day.

    Equivalent to a half-life of :func:`half_life`(scale). Weights are
    bias-corrected over the available history.
    """
    frame = pd.DataFrame(np.asarray(close, dtype=float))
    return frame.ewm(alpha=1.0 / scale, adjust=True, min_periods=min_periods).mean().to_numpy()


def macd_series(close: np.ndarray, short: int, long: int, min_periods: int = PRICE_STD_WINDOW) -> np.ndarray:
    return ewma(close, short, min_periods) - ewma(close, long, min_periods)


def _rolling_std(x: np.ndarray, window: int) -> np.ndarray:
    return pd.DataFrame(x).rolling(window, min_periods=window).std(ddof=1).to_numpy()


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(np.broadcast(num, den).shape, np.nan)
    ok = np.isfinite(num) & np.isfinite(den) & (den > 0)
    np.divide(num, den, out=out, where=ok)
    return out


def macd_intermediate_series(close: np.ndarray, short: int, long: int,
                             params: MacdParams = MacdParams()) -> np.ndarray:
    """Two-stage normalized MACD.

    ``xi = MACD / std(price, 63d)`` and ``y = xi / std(xi, 252d)``. Zero
    dispersion at either stage yields NaN.
    """
    close = np.asarray(close, dtype=float)
    xi = _safe_div(macd_series(close, short, long), _rolling_std(close, params.price_std_window))
    return _safe_div(xi, _rolling_std(xi, params.signal_std_window))


def response_phi(x):
    return x * np.exp(-np.square(x) / 4.0) / 0.89


def _column(panel: PricePanel, asset) -> np.ndarray:
    j = asset if isinstance(asset, (int, np.integer)) else panel.asset_index(asset)
    return panel.close[:, [j]]


def macd(panel: PricePanel, asset, t: int, short: int, long: int, min_history: int = 252) -> float:
    col = _column(panel, asset)
    if np.count_nonzero(np.isfinite(col[: t + 1])) < min_history:
        return np.nan
    return float(macd_series(col[: t + 1], short, long)[t, 0])


def macd_intermediate(panel: PricePanel, asset, t: int, short: int, long: int) -> float:
    col = _column(panel, asset)
    return float(macd_intermediate_series(col[: t + 1], short, long)[t, 0])


def baz_composite(intermediates) -> float:
    """Sum of ``response_phi`` over the per-pair intermediates; NaN propagates."""
    vals = np.asarray(intermediates, dtype=float)
    return float(np.sum(response_phi(vals)))


def normalized_return(panel: PricePanel, vol_daily: np.ndarray, asset, t: int, window: int) -> float:
    j = asset if isinstance(asset, (int, np.integer)) else panel.asset_index(asset)
    if t - window < 0:
        return np.nan
    r = panel.close[t, j] / panel.close[t - window, j] - 1.0
    return float(_safe_div(np.asarray(r), np.asarray(vol_daily[t, j] * np.sqrt(window))))


@dataclass
class FeatureCube:
    """Full-history base series from which any (date, asset) vector is gathered.

    Everything here is causal: the value at row ``t`` depends only on prices
    dated at or before ``t``.
    """

    raw: dict[int, np.ndarray]
    normalized: dict[int, np.ndarray]
    intermediates: list[np.ndarray]
    composite: np.ndarray
    params: MacdParams = field(default_factory=MacdParams)

    @classmethod
    def from_panel(cls, panel: PricePanel, vol: VolEstimate, params: MacdParams = MacdParams()) -> "FeatureCube":
        close = panel.close
        vol_daily = vol.daily
        raw, normed = {}, {}
        for w in RETURN_WINDOWS:
            raw[w] = cumulative_returns(close, w)
            normed[w] = _safe_div(raw[w], vol_daily * np.sqrt(w))
        inter = [macd_intermediate_series(close, s, l, params) for s, l in params.pairs]
        composite = np.sum([response_phi(y) for y in inter], axis=0)
        return cls(raw, normed, inter, composite, params)

    def at(self, t: int, assets: np.ndarray) -> np.ndarray:
        """Raw (unstandardized) feature matrix ``(len(assets), 22)``; NaN where unavailable."""
        assets = np.asarray(assets, dtype=int)
        cols = [self.raw[w][t, assets] for w in RETURN_WINDOWS]
        cols += [self.normalized[w][t, assets] for w in RETURN_WINDOWS]
        for y in self.intermediates:
            for lag in LAGS:
                cols.append(y[t - lag, assets] if t - lag >= 0 else np.full(len(assets), np.nan))
        cols.append(self.composite[t, assets])
        return np.column_stack(cols) if len(assets) else np.empty((0, N_FEATURES))


def standardize_cross_section(X: np.ndarray, clip: float = CLIP) -> np.ndarray:
    """Z-score each column over the rows (population std, floored), then clip."""
    if len(X) == 0:
        return X.copy()
    mu = X.mean(axis=0)
    sd = np.maximum(X.std(axis=0), STD_FLOOR)
    return np.clip((X - mu) / sd, -clip, clip)


def build_features(cube: FeatureCube, universe: UniverseSnapshot, *, standardize: bool = False,
                   clip: float = CLIP) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows for the universe at its rebalance date.

    Returns ``(asset_indices, X)``; assets with any missing field are dropped
    (logged at debug level with the count).
    """
    X = cube.at(universe.t, universe.assets)
    keep = np.all(np.isfinite(X), axis=1)
    dropped = int(len(keep) - keep.sum())
    if dropped:
        logger.debug("t=%d: dropped %d assets with incomplete features", universe.t, dropped)
    assets, X = universe.assets[keep], X[keep]
    if standardize:
        X = standardize_cross_section(X, clip)
    return assets, X
