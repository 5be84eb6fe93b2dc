"""Training loops, seeded random hyperparameter search and the walk-forward
protocol (re-tune every few years, freeze, score the following window)."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .features import FeatureCube, build_features
from .labeling import RankingDataset, RankingGroup, build_group
from .market_data import MONTH_DAYS, PricePanel, VolEstimate, eligible_universe, month_end_calendar, \
    panel_volatility
from .nn import AdamState, MlpSpec, adam_step, backward, forward, init_params
from .rankers.lambdamart import lambdamart_train
from .rankers.losses import listmle_loss_grad, listnet_loss_grad, make_pairs, mse_loss_grad, ranknet_loss_grad
from .rankers.models import HEURISTIC_KINDS, NEURAL_KINDS, ScoreModel, heuristic_model, save_model, score
from .rng import child_seed, stream

logger = logging.getLogger(__name__)

_NEURAL_COMMON = {
    "dropout": [0.0, 0.2, 0.4, 0.6, 0.8],
    "width": [64, 128, 256, 512, 1024, 2048],
    "max_grad_norm": [1e-3, 1e-2, 1e-1, 1.0, 10.0],
}

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "mlp": {**_NEURAL_COMMON,
            "lr": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            "batch": [64, 128, 256, 512, 1024]},
    "ranknet": {**_NEURAL_COMMON,
                "lr": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
                "batch": [64, 128, 256, 512, 1024]},
    "listnet": {**_NEURAL_COMMON,
                "lr": [1e-8, 1e-7, 1e-6, 1e-5, 1e-4],
                "batch": [1, 2, 4, 8, 16]},
    "listmle": {**_NEURAL_COMMON,
                "lr": [1e-8, 1e-7, 1e-6, 1e-5, 1e-4],
                "batch": [1, 2, 4, 8, 16]},
    "lambdamart": {"eta": [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
                   "rounds": [5, 10, 20, 40, 80, 160, 320],
                   "max_depth": [2, 4, 6, 8, 10]},
}
"""Discrete search spaces. For ranknet ``batch`` is the number of securities
sampled per rebalance to form pairs; for listnet/listmle it is the number of
rebalances per minibatch; for mlp it is the number of rows."""


class CandidateFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperGrid:
    values: dict[str, list]

    @classmethod
    def for_kind(cls, kind: str, overrides: dict | None = None) -> "HyperGrid":
        base = {k: list(v) for k, v in DEFAULT_GRIDS[kind].items()}
        for k, v in (overrides or {}).items():
            if k not in base:
                raise ValueError(f"unknown hyperparameter {k!r} for {kind}")
            base[k] = list(v)
        return cls(base)

    @property
    def n_cells(self) -> int:
        return math.prod(len(v) for v in self.values.values())

    def sample(self, rng: np.random.Generator) -> dict:
        return {k: v[int(rng.integers(len(v)))] for k, v in self.values.items()}

    def cells(self):
        keys = list(self.values)
        for combo in itertools.product(*(self.values[k] for k in keys)):
            yield dict(zip(keys, combo))


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    patience: int = 25
    train_fraction: float = 0.9
    search_iterations: int = 50
    dedup: bool = True
    ranknet_sigma: float = 1.0
    listnet_target: str = "grade"
    lambdamart_min_leaf: int = 20
    k_eval: int = 100

    def __post_init__(self):
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("patience must be positive and below max_epochs")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class WalkForwardConfig:
    retune_years: int = 5
    min_history_years: float = 3.0
    window: str = "expanding"
    rolling_years: float | None = None

    def __post_init__(self):
        if self.window not in ("expanding", "rolling"):
            raise ValueError("window must be 'expanding' or 'rolling'")
        if self.window == "rolling" and not self.rolling_years:
            raise ValueError("rolling window needs rolling_years")


def chronological_split(dataset: RankingDataset, train_fraction: float = 0.9,
                        min_each: int = 2) -> tuple[RankingDataset, RankingDataset]:
    """First ``train_fraction`` of rebalances train, the rest validate (each side >= ``min_each``)."""
    n = len(dataset)
    if n < 2 * min_each:
        raise ValueError(f"need at least {2 * min_each} groups to split, got {n}")
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, min_each), n - min_each)
    return RankingDataset(dataset.groups[:n_train]), RankingDataset(dataset.groups[n_train:])


# ---------------------------------------------------------------------------
# neural training


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    failed: bool = False

    @property
    def best_valid(self) -> float:
        return self.valid_loss[self.best_epoch - 1] if self.best_epoch else np.inf


def _listnet_labels(group: RankingGroup, target: str) -> np.ndarray:
    return group.grades.astype(float) if target == "grade" else group.targets


def _group_loss_grad(kind: str, s: np.ndarray, group: RankingGroup, config: TrainConfig, pairs=None):
    if kind == "ranknet":
        if pairs is None:
            pairs = make_pairs(group.grades)
        return ranknet_loss_grad(s, pairs, config.ranknet_sigma)
    if kind == "listnet":
        return listnet_loss_grad(s, _listnet_labels(group, config.listnet_target))
    if kind == "listmle":
        return listmle_loss_grad(s, group.order)
    raise ValueError(kind)


class _Validator:
    """Eval-mode validation loss, with the concatenated inputs cached."""

    def __init__(self, kind, groups, config):
        self.kind, self.groups, self.config = kind, list(groups), config
        self.X = np.vstack([g.Xs for g in self.groups])
        self.bounds = np.cumsum([0] + [len(g) for g in self.groups])
        if kind == "mlp":
            self.y = np.concatenate([g.targets for g in self.groups])
        elif kind == "ranknet":
            self.pairs = [make_pairs(g.grades) for g in self.groups]

    def __call__(self, params, spec) -> float:
        s, _ = forward(params, spec, self.X)
        if self.kind == "mlp":
            return mse_loss_grad(s, self.y)[0]
        losses = []
        for i, g in enumerate(self.groups):
            sg = s[self.bounds[i]:self.bounds[i + 1]]
            pairs = self.pairs[i] if self.kind == "ranknet" else None
            losses.append(_group_loss_grad(self.kind, sg, g, self.config, pairs)[0])
        return float(np.mean(losses))


def _epoch_batches(kind, groups, hp, rng, config):
    """Yield ``(X, loss_grad_fn)`` minibatches for one epoch."""
    if kind == "mlp":
        X = np.vstack([g.Xs for g in groups])
        y = np.concatenate([g.targets for g in groups])
        perm = rng.permutation(len(X))
        bs = int(hp["batch"])
        for k in range(0, len(perm), bs):
            idx = perm[k:k + bs]
            yield X[idx], (lambda s, yy=y[idx]: mse_loss_grad(s, yy))
    elif kind == "ranknet":
        pool = int(hp["batch"])
        for gi in rng.permutation(len(groups)):
            g = groups[gi]
            take = np.sort(rng.choice(len(g), min(pool, len(g)), replace=False))
            pairs = make_pairs(g.grades[take])
            if len(pairs) == 0:
                continue
            yield g.Xs[take], (lambda s, p=pairs: ranknet_loss_grad(s, p, config.ranknet_sigma))
    else:
        bs = int(hp["batch"])
        order = rng.permutation(len(groups))
        for k in range(0, len(order), bs):
            batch = [groups[i] for i in order[k:k + bs]]
            X = np.vstack([g.Xs for g in batch])
            bounds = np.cumsum([0] + [len(g) for g in batch])

            def fn(s, batch=batch, bounds=bounds):
                total, grad = 0.0, np.zeros_like(s)
                for i, g in enumerate(batch):
                    sl = slice(bounds[i], bounds[i + 1])
                    loss, gr = _group_loss_grad(kind, s[sl], g, config)
                    total += loss
                    grad[sl] = gr
                return total / len(batch), grad / len(batch)
            yield X, fn



def train_neural(kind: str, train_groups, valid_groups, hp: dict, config: TrainConfig = TrainConfig(),
                 seed: int = 0) -> tuple[ScoreModel, TrainHistory]:
    """Adam training with early stopping on validation loss; best parameters restored.

    Raises :class:`CandidateFailed` if the loss becomes non-finite.
    """
    if kind not in NEURAL_KINDS:
        raise ValueError(f"{kind!r} is not a neural model")
    train_groups, valid_groups = list(train_groups), list(valid_groups)
    if not train_groups or not valid_groups:
        raise ValueError("need at least one training and one validation group")
    spec = MlpSpec(n_inputs=train_groups[0].X.shape[1], width=int(hp["width"]), dropout=float(hp["dropout"]))
    params = init_params(spec, stream(seed, "init"))
    opt = AdamState.for_params(params, float(hp["lr"]))
    drop_rng = stream(seed, "dropout")
    batch_rng = stream(seed, "batches")
    validate = _Validator(kind, valid_groups, config)
    hist = TrainHistory()
    best_params, best_val, bad = params.copy(), np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for X, fn in _epoch_batches(kind, train_groups, hp, batch_rng, config):
            s, cache = forward(params, spec, X, train=True, rng=drop_rng)
            loss, ds = fn(s)
            if not np.isfinite(loss):
                hist.failed = True
                raise CandidateFailed(f"{kind}: non-finite training loss at epoch {epoch}")
            adam_step(opt, params, backward(cache, ds), hp.get("max_grad_norm"))
            losses.append(loss)
        if not params.all_finite():
            hist.failed = True
            raise CandidateFailed(f"{kind}: parameters diverged at epoch {epoch}")
        val = validate(params, spec)
        if not np.isfinite(val):
            hist.failed = True
            raise CandidateFailed(f"{kind}: non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(float(np.mean(losses)) if losses else np.nan)
        hist.valid_loss.append(float(val))
        hist.epochs_run = epoch
        if val < best_val:
            best_val, best_params, bad = val, params.copy(), 0
            hist.best_epoch = epoch
        else:
            bad += 1
            if bad >= config.patience:
                break
    model = ScoreModel(kind, mlp_spec=spec, mlp_params=best_params, standardize=True, seed=seed,
                       hyperparams=dict(hp),
                       meta={"best_epoch": hist.best_epoch, "epochs_run": hist.epochs_run,
                             "best_valid_loss": float(best_val)})
    return model, hist


def train_lambdamart(train_groups, valid_groups, hp: dict, config: TrainConfig = TrainConfig(),
                     seed: int = 0) -> tuple[ScoreModel, object]:
    ens, hist = lambdamart_train(train_groups, valid_groups, eta=float(hp["eta"]), rounds=int(hp["rounds"]),
                                 max_depth=int(hp["max_depth"]), min_leaf=config.lambdamart_min_leaf,
                                 k_eval=config.k_eval, seed=seed)
    best = hist.valid_ndcg[hist.best_round - 1] if hist.valid_ndcg and hist.best_round else np.nan
    model = ScoreModel("lambdamart", trees=ens, standardize=True, seed=seed, hyperparams=dict(hp),
                       meta={"best_round": hist.best_round, "best_valid_ndcg": float(best)})
    return model, hist


# ---------------------------------------------------------------------------
# search


@dataclass
class SearchResult:
    best: ScoreModel
    leaderboard: list[dict]
    criterion: str


def random_search(kind: str, dataset: RankingDataset, grid: HyperGrid | None = None,
                  config: TrainConfig = TrainConfig(), seed: int = 0) -> SearchResult:
    """Uniform draws (with replacement) from ``grid``; best validation criterion wins.

    Neural kinds minimise their own validation loss; LambdaMART maximises mean
    validation NDCG@k. With ``config.dedup`` repeated cells are trained once.
    """
    grid = grid or HyperGrid.for_kind(kind)
    train, valid = chronological_split(dataset, config.train_fraction)
    rng = stream(seed, "search", kind)
    draws = [grid.sample(rng) for _ in range(config.search_iterations)]
    seen, candidates = set(), []
    for i, hp in enumerate(draws):
        key = tuple(sorted(hp.items()))
        if config.dedup and key in seen:
            continue
        seen.add(key)
        candidates.append((i, hp))
    board = []
    best_model, best_crit = None, None
    maximize = kind == "lambdamart"
    for i, hp in candidates:
        cseed = child_seed(seed, "candidate", kind, i)
        try:
            if kind == "lambdamart":
                model, _ = train_lambdamart(train, valid, hp, config, cseed)
                crit = model.meta["best_valid_ndcg"]
            else:
                model, _ = train_neural(kind, train, valid, hp, config, cseed)
                crit = model.meta["best_valid_loss"]
        except CandidateFailed as exc:
            logger.warning("candidate %d failed: %s", i, exc)
            board.append({"draw": i, "seed": cseed, **hp, "criterion": np.nan, "failed": True})
            continue
        board.append({"draw": i, "seed": cseed, **hp, "criterion": float(crit), "failed": False})
        better = best_crit is None or (crit > best_crit if maximize else crit < best_crit)
        if better:
            best_model, best_crit = model, crit
    if best_model is None:
        raise RuntimeError(f"{kind}: every search candidate failed")
    ok = [r for r in board if not r["failed"]]
    ok.sort(key=lambda r: (-r["criterion"] if maximize else r["criterion"], r["draw"]))
    board = ok + [r for r in board if r["failed"]]
    best_model.meta.update({"train_groups": len(train), "valid_groups": len(valid)})
    return SearchResult(best_model, board, "valid_ndcg" if maximize else "valid_loss")


# ---------------------------------------------------------------------------
# walk-forward


class PanelContext:
    """Derived quantities shared by every model run on one panel."""

    def __init__(self, panel: PricePanel, *, horizon: int = MONTH_DAYS, grade_by: str = "normalized"):
        self.panel = panel
        self.vol: VolEstimate = panel_volatility(panel)
        self.cube = FeatureCube.from_panel(panel, self.vol)
        self.calendar = month_end_calendar(panel)
        self.horizon = horizon
        self.grade_by = grade_by
        self._groups: dict[int, RankingGroup | None] = {}
        self._sections: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def group(self, t: int) -> RankingGroup | None:
        if t not in self._groups:
            self._groups[t] = build_group(self.panel, self.vol, self.cube, t,
                                          horizon=self.horizon, grade_by=self.grade_by)
        return self._groups[t]

    def dataset(self, end: int, start: int = 0) -> RankingDataset:
        """Groups whose features and labels lie within panel indices ``[start, end]``."""
        groups = []
        for t in self.calendar:
            t = int(t)
            if t < start or t + self.horizon > end:
                continue
            g = self.group(t)
            if g is not None:
                groups.append(g)
        return RankingDataset(groups)

    def cross_section(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Eligible assets with complete raw features at ``t``."""
        if t not in self._sections:
            self._sections[t] = build_features(self.cube, eligible_universe(self.panel, self.vol, t))
        return self._sections[t]


@dataclass
class WindowRecord:
    retune_t: int
    retune_date: str
    oos_rebalances: list[int]
    model: ScoreModel
    n_train_groups: int = 0
    n_valid_groups: int = 0
    train_start_date: str | None = None
    train_end_date: str | None = None
    leaderboard: list[dict] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "retune_date": self.retune_date,
            "oos_start": None, "oos_end": None,
            "n_train_groups": self.n_train_groups,
            "n_valid_groups": self.n_valid_groups,
            "train_start_date": self.train_start_date,
            "train_end_date": self.train_end_date,
            "hyperparams": self.model.hyperparams,
            "seed": self.model.seed,
            "meta": self.model.meta,
            "leaderboard": self.leaderboard,
        }


@dataclass
class WalkForwardResult:
    kind: str
    scores: dict[int, tuple[np.ndarray, np.ndarray]]
    windows: list[WindowRecord]
    provenance: dict[int, int]


def retune_points(panel: PricePanel, calendar, years: int = 5) -> list[int]:
    """First rebalance on/after each ``start + k*years`` anniversary (k >= 1)."""
    start = pd.Timestamp(panel.dates[0])
    cal_dates = panel.dates[calendar]
    points = []
    k = 1
    while True:
        target = np.datetime64((start + pd.DateOffset(years=k * years)).date(), "D")
        pos = int(np.searchsorted(cal_dates, target, side="left"))
        if pos >= len(calendar):
            break
        points.append(int(calendar[pos]))
        k += 1
    return points


def _years_between(a, b) -> float:
    return float((np.datetime64(b, "D") - np.datetime64(a, "D")).astype(int)) / 365.25


def walk_forward(ctx: PanelContext, kind: str, wf: WalkForwardConfig = WalkForwardConfig(),
                 config: TrainConfig = TrainConfig(), *, grid: HyperGrid | None = None, seed: int = 0,
                 checkpoint_dir=None) -> WalkForwardResult:
    """Retune at each anniversary, freeze the winner and score the following window.

    Training data for a retune at index ``R`` only contains rebalances whose
    21-day label window closes at or before ``R``. Heuristic kinds skip the
    search and score the same out-of-sample windows.
    """
    panel, cal = ctx.panel, ctx.calendar
    points = retune_points(panel, cal, wf.retune_years)
    if not points:
        raise ValueError("panel too short for a single retune interval")
    scores, windows, provenance = {}, [], {}
    for w_idx, R in enumerate(points):
        nxt = points[w_idx + 1] if w_idx + 1 < len(points) else panel.n_dates
        oos = [int(t) for t in cal if R <= t < nxt]
        rdate = str(panel.dates[R])
        if _years_between(panel.dates[0], panel.dates[R]) < wf.min_history_years:
            logger.warning("%s: retune at %s has under %.1f years of history; skipped",
                           kind, rdate, wf.min_history_years)
            continue
        if kind in HEURISTIC_KINDS:
            record = WindowRecord(R, rdate, oos, heuristic_model(kind, child_seed(seed, "random-model")))
        else:
            start = 0
            if wf.window == "rolling":
                cutoff = np.datetime64((pd.Timestamp(panel.dates[R])
                                        - pd.DateOffset(days=int(wf.rolling_years * 365.25))).date(), "D")
                start = int(np.searchsorted(panel.dates, cutoff))
            ds = ctx.dataset(end=R, start=start)
            if len(ds) < 4:
                logger.warning("%s: only %d labelled rebalances before %s; window skipped", kind, len(ds), rdate)
                continue
            wseed = child_seed(seed, "window", kind, rdate)
            result = random_search(kind, ds, grid, config, wseed)
            model = result.best
            assert ds.last_data_index() <= R
            record = WindowRecord(R, rdate, oos, model, model.meta.get("train_groups", 0),
                                  model.meta.get("valid_groups", 0), str(ds.groups[0].date),
                                  str(ds.groups[-1].date), result.leaderboard)
            logger.info("%s: retune %s -> %s", kind, rdate, model.hyperparams)
        if checkpoint_dir is not None and record.model.learned:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_model(record.model, Path(checkpoint_dir) / f"{kind}_{rdate}.json")
        windows.append(record)
        for t in oos:
            assets, X = ctx.cross_section(t)
            if len(assets) == 0:
                continue
            scores[t] = (assets, score(record.model, X, panel.dates[t]))
            provenance[t] = len(windows) - 1
    return WalkForwardResult(kind, scores, windows, provenance)
