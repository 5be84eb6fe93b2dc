"""Forward targets, decile relevance grades and the per-rebalance ranking dataset.

Each rebalance is one query; its assets are the documents and their decile of
21-day forward, volatility-normalized return is the graded relevance label.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .features import FeatureCube, N_FEATURES, build_features, standardize_cross_section
from .market_data import MONTH_DAYS, PricePanel, VolEstimate, eligible_universe

logger = logging.getLogger(__name__)

N_GRADES = 10


def forward_target(panel: PricePanel, vol: VolEstimate, asset, t: int, horizon: int = MONTH_DAYS) -> float:
    """``(p[t+h]/p[t] - 1) / sigma_monthly[t]``; NaN when the window runs past the data."""
    j = asset if isinstance(asset, (int, np.integer)) else panel.asset_index(asset)
    return float(forward_targets(panel, vol, t, np.array([j]), horizon)[0])


def forward_returns(panel: PricePanel, t: int, assets: np.ndarray, horizon: int = MONTH_DAYS) -> np.ndarray:
    if t + horizon >= panel.n_dates:
        return np.full(len(assets), np.nan)
    return panel.close[t + horizon, assets] / panel.close[t, assets] - 1.0


def forward_targets(panel: PricePanel, vol: VolEstimate, t: int, assets: np.ndarray,
                    horizon: int = MONTH_DAYS) -> np.ndarray:
    r = forward_returns(panel, t, assets, horizon)
    sig = vol.monthly[t, assets]
    out = np.full(len(assets), np.nan)
    ok = np.isfinite(r) & np.isfinite(sig) & (sig > 0)
    out[ok] = r[ok] / sig[ok]
    return out


def label_ranks(targets, ids=None) -> np.ndarray:
    """Ascending 0-based rank of each target; ties go to the smaller id."""
    targets = np.asarray(targets, dtype=float)
    ids = np.arange(len(targets)) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, targets))
    ranks = np.empty(len(targets), dtype=int)
    ranks[order] = np.arange(len(targets))
    return ranks


def decile_grades(targets, ids=None) -> np.ndarray:
    """Grades 0..9 with ``grade = floor(rank * 10 / N)``; 9 is the best decile."""
    n = len(targets)
    if n < N_GRADES:
        raise ValueError(f"need at least {N_GRADES} targets to grade, got {n}")
    ranks = label_ranks(targets, ids)
    return np.minimum(ranks * N_GRADES // n, N_GRADES - 1)


@dataclass
class RankingGroup:
    """One rebalance: asset indices, raw features, grades and regression targets."""

    t: int
    date: np.datetime64
    assets: np.ndarray
    X: np.ndarray
    grades: np.ndarray
    targets: np.ndarray
    horizon: int = MONTH_DAYS

    def __len__(self):
        return len(self.assets)

    @cached_property
    def Xs(self) -> np.ndarray:
        """Cross-sectionally standardized features."""
        return standardize_cross_section(self.X)

    @cached_property
    def order(self) -> np.ndarray:
        """Indices sorted best-first, consistent with the grade tie rule."""
        return np.argsort(-label_ranks(self.targets, self.assets), kind="stable")


@dataclass
class RankingDataset:
    groups: list[RankingGroup] = field(default_factory=list)

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    @property
    def n_rows(self) -> int:
        return sum(len(g) for g in self.groups)

    def split(self, train_fraction: float = 0.9) -> tuple["RankingDataset", "RankingDataset"]:
        """Chronological split: the first ``train_fraction`` of groups train, the rest validate."""
        n = len(self.groups)
        n_train = int(round(train_fraction * n))
        n_train = min(max(n_train, 1), n - 1) if n >= 2 else n
        return RankingDataset(self.groups[:n_train]), RankingDataset(self.groups[n_train:])

    def last_data_index(self) -> int:
        """Largest panel index any group's features or labels touch."""
        return max((g.t + g.horizon for g in self.groups), default=-1)


def build_group(panel: PricePanel, vol: VolEstimate, cube: FeatureCube, t: int, *,
                horizon: int = MONTH_DAYS, grade_by: str = "normalized") -> RankingGroup | None:
    universe = eligible_universe(panel, vol, t)
    if universe.n == 0:
        return None
    assets, X = build_features(cube, universe)
    if grade_by == "normalized":
        targets = forward_targets(panel, vol, t, assets, horizon)
        perf = targets
    elif grade_by == "raw":
        targets = forward_targets(panel, vol, t, assets, horizon)
        perf = forward_returns(panel, t, assets, horizon)
    else:
        raise ValueError(f"unknown grade_by {grade_by!r}")
    keep = np.isfinite(targets) & np.isfinite(perf)
    if keep.sum() < N_GRADES:
        if len(assets):
            logger.warning("%s: only %d labelled assets, group dropped", panel.dates[t], keep.sum())
        return None
    assets, X, targets, perf = assets[keep], X[keep], targets[keep], perf[keep]
    grades = decile_grades(perf, assets)
    return RankingGroup(t, panel.dates[t], assets, X, grades, targets, horizon)


def build_dataset(panel: PricePanel, vol: VolEstimate, calendar, cube: FeatureCube | None = None, *,
                  horizon: int = MONTH_DAYS, end: int | None = None,
                  grade_by: str = "normalized") -> RankingDataset:
    """One group per rebalance with complete features, targets and grades.

    If ``end`` is given, only rebalances whose label window closes at or
    before panel index ``end`` are used, so nothing dated after ``end``
    enters the dataset.
    """
    if len(calendar) < 2:
        raise ValueError("need at least 2 rebalances")
    if cube is None:
        cube = FeatureCube.from_panel(panel, vol)
    groups = []
    for t in calendar:
        t = int(t)
        if end is not None and t + horizon > end:
            continue
        g = build_group(panel, vol, cube, t, horizon=horizon, grade_by=grade_by)
        if g is not None:
            groups.append(g)
    if not groups:
        raise ValueError("no usable rebalance groups")
    ds = RankingDataset(groups)
    if end is not None:
        assert ds.last_data_index() <= end, "label window leaks past the cutoff"
    return ds


def write_dataset_csv(dataset: RankingDataset, panel: PricePanel, path) -> None:
    """Dump ``rebalance_date,asset,f01..f22,grade,target`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rebalance_date", "asset"] + [f"f{k:02d}" for k in range(1, N_FEATURES + 1)]
                   + ["grade", "target"])
        for g in dataset:
            for row, a in enumerate(g.assets):
                w.writerow([str(g.date), panel.assets[a]] + [repr(float(v)) for v in g.X[row]]
                           + [int(g.grades[row]), repr(float(g.targets[row]))])
