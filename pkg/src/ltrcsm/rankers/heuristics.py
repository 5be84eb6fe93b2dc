"""Scores that need no training: random, 12-month return, composite MACD."""

from __future__ import annotations

import numpy as np

from ..features import BAZ_COLUMN, JT_COLUMN
from ..rng import stream


def _day_number(date) -> int:
    return int(np.datetime64(date, "D").astype("int64"))


def score_random(n: int, seed: int, date) -> np.ndarray:
    """i.i.d. uniform scores, reproducible for a given (seed, rebalance date)."""
    return stream(seed, "random-model", _day_number(date)).random(n)


def score_jt(X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=float)[:, JT_COLUMN].copy()


def score_baz(X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=float)[:, BAZ_COLUMN].copy()
