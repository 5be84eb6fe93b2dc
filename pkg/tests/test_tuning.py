import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltrcsm.labeling import RankingDataset
from ltrcsm.nn import MlpSpec, init_params
from ltrcsm.rankers import score
from ltrcsm.rng import stream
from ltrcsm.tuning import (
    DEFAULT_GRIDS,
    HyperGrid,
    PanelContext,
    TrainConfig,
    WalkForwardConfig,
    _Validator,
    chronological_split,
    random_search,
    retune_points,
    train_lambdamart,
    train_neural,
    walk_forward,
)
from ltrcsm.market_data import PricePanel, month_end_calendar

from conftest import make_panel

FAST = TrainConfig(max_epochs=6, patience=3, search_iterations=3)
ONE_NEURAL = {"lr": [1e-3], "width": [64], "dropout": [0.0], "max_grad_norm": [1.0], "batch": [8]}


@pytest.fixture(scope="module")
def dataset(small_ctx):
    return small_ctx.dataset(end=small_ctx.panel.n_dates - 1)


def test_grids_match_reference_values():
    common = {"dropout": [0.0, 0.2, 0.4, 0.6, 0.8], "width": [64, 128, 256, 512, 1024, 2048],
              "max_grad_norm": [1e-3, 1e-2, 1e-1, 1.0, 10.0]}
    fast_lr = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    slow_lr = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4]
    assert DEFAULT_GRIDS["mlp"] == {**common, "lr": fast_lr, "batch": [64, 128, 256, 512, 1024]}
    assert DEFAULT_GRIDS["ranknet"] == {**common, "lr": fast_lr, "batch": [64, 128, 256, 512, 1024]}
    for k in ("listnet", "listmle"):
        assert DEFAULT_GRIDS[k] == {**common, "lr": slow_lr, "batch": [1, 2, 4, 8, 16]}
    assert DEFAULT_GRIDS["lambdamart"] == {"eta": fast_lr, "rounds": [5, 10, 20, 40, 80, 160, 320],
                                              "max_depth": [2, 4, 6, 8, 10]}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(DEFAULT_GRIDS)), st.integers(0, 2**32 - 1))
def test_sampling_stays_in_grid(kind, seed):
    grid = HyperGrid.for_kind(kind)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        hp = grid.sample(rng)
        assert set(hp) == set(grid.values)
        assert all(v in grid.values[k] for k, v in hp.items())


def test_grid_overrides():
    g = HyperGrid.for_kind("lambdamart", {"rounds": [40]})
    assert g.n_cells == 7 * 5 and len(list(g.cells())) == 35
    with pytest.raises(ValueError):
        HyperGrid.for_kind("mlp", {"momentum": [0.9]})


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=10)
    with pytest.raises(ValueError):
        TrainConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        WalkForwardConfig(window="rolling")


def test_chronological_split(dataset):
    train, valid = chronological_split(dataset, 0.9)
    assert len(train) + len(valid) == len(dataset)
    assert max(g.t for g in train.groups) < min(g.t for g in valid.groups)
    assert len(valid) == len(dataset) - round(0.9 * len(dataset))
    tr, va = chronological_split(RankingDataset(dataset.groups[:5]), 0.9)
    assert len(tr) == 3 and len(va) == 2
    with pytest.raises(ValueError):
        chronological_split(RankingDataset(dataset.groups[:3]))


def test_lr_zero_keeps_params_and_loss(dataset):
    groups = dataset.groups[:8]
    hp = {"lr": 0.0, "width": 64, "dropout": 0.0, "max_grad_norm": 1.0, "batch": 16}
    cfg = TrainConfig(max_epochs=20, patience=4)
    model, hist = train_neural("listmle", groups[:6], groups[6:], hp, cfg, seed=5)
    ref = init_params(MlpSpec(22, 64, 0.0), stream(5, "init"))
    np.testing.assert_array_equal(model.mlp_params.flat(), ref.flat())
    assert len(set(hist.valid_loss)) == 1
    # the shuffled group order only changes floating-point summation order
    np.testing.assert_allclose(hist.train_loss, hist.train_loss[0], rtol=1e-13)
    # no strict improvement after epoch 1, so patience ends the run early
    assert hist.best_epoch == 1 and hist.epochs_run == 1 + cfg.patience < cfg.max_epochs


def test_restored_params_are_validation_argmin(dataset):
    train, valid = chronological_split(dataset)
    hp = {"lr": 1e-2, "width": 64, "dropout": 0.2, "max_grad_norm": 1.0, "batch": 64}
    for kind in ("mlp", "ranknet", "listnet"):
        cfg = TrainConfig(max_epochs=8, patience=3)
        model, hist = train_neural(kind, train.groups, valid.groups, hp, cfg, seed=1)
        best = int(np.argmin(hist.valid_loss))
        assert hist.best_epoch == best + 1
        recomputed = _Validator(kind, valid.groups, cfg)(model.mlp_params, model.mlp_spec)
        assert recomputed == pytest.approx(hist.valid_loss[best], rel=1e-12)
        assert model.meta["best_valid_loss"] == pytest.approx(min(hist.valid_loss), rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_marks_candidate_failed(dataset):
    from ltrcsm.tuning import CandidateFailed
    train, valid = chronological_split(dataset)
    hp = {"lr": 1e300, "width": 64, "dropout": 0.0, "max_grad_norm": 1e300, "batch": 64}
    with pytest.raises(CandidateFailed):
        train_neural("mlp", train.groups, valid.groups, hp, TrainConfig(max_epochs=5, patience=2), seed=0)
    grid = HyperGrid({k: [v] for k, v in hp.items()})
    with pytest.raises(RuntimeError, match="every search candidate failed"):
        random_search("mlp", dataset, grid, TrainConfig(max_epochs=5, patience=2, search_iterations=2))


def test_one_cell_grid_dedups(dataset):
    res = random_search("listnet", dataset, HyperGrid(ONE_NEURAL), FAST, seed=0)
    assert len(res.leaderboard) == 1
    cfg = TrainConfig(max_epochs=6, patience=3, search_iterations=3, dedup=False)
    assert len(random_search("listnet", dataset, HyperGrid(ONE_NEURAL), cfg, seed=0).leaderboard) == 3


def test_leaderboard_sorted_and_deterministic(dataset):
    grid = HyperGrid({**ONE_NEURAL, "lr": [1e-4, 1e-3, 1e-2], "width": [64, 128]})
    cfg = TrainConfig(max_epochs=5, patience=2, search_iterations=4)
    a = random_search("mlp", dataset, grid, cfg, seed=3)
    crit = [r["criterion"] for r in a.leaderboard]
    assert crit == sorted(crit) and a.criterion == "valid_loss"
    assert a.best.meta["best_valid_loss"] == crit[0]
    b = random_search("mlp", dataset, grid, cfg, seed=3)
    assert a.best.hyperparams == b.best.hyperparams
    np.testing.assert_array_equal(a.best.mlp_params.flat(), b.best.mlp_params.flat())

    lgrid = HyperGrid({"eta": [0.1, 1.0], "rounds": [5, 10], "max_depth": [2, 4]})
    lm = random_search("lambdamart", dataset, lgrid, cfg, seed=3)
    crit = [r["criterion"] for r in lm.leaderboard]
    assert crit == sorted(crit, reverse=True) and lm.criterion == "valid_ndcg"


def test_lambdamart_training_meta(dataset):
    train, valid = chronological_split(dataset)
    model, hist = train_lambdamart(train.groups, valid.groups, {"eta": 0.1, "rounds": 10, "max_depth": 2})
    assert 1 <= model.meta["best_round"] <= 10
    assert model.meta["best_valid_ndcg"] == pytest.approx(max(hist.valid_ndcg))


def test_retune_points_forty_years():
    dates = np.arange(np.datetime64("1980-01-01"), np.datetime64("2020-01-01"))
    dates = dates[np.is_busday(dates)]
    panel = PricePanel(dates, ("A", "B"), np.ones((len(dates), 2)))
    pts = retune_points(panel, month_end_calendar(panel), 5)
    got = [str(panel.dates[p]) for p in pts]
    assert [d[:4] for d in got] == ["1985", "1990", "1995", "2000", "2005", "2010", "2015"]
    assert got[0] == "1985-01-31"


def test_heuristics_bypass_training(small_ctx, monkeypatch):
    import ltrcsm.tuning as tuning

    def boom(*a, **k):
        raise AssertionError("heuristic kinds must not search")

    monkeypatch.setattr(tuning, "random_search", boom)
    for kind in ("jt", "baz", "rand"):
        res = walk_forward(small_ctx, kind, seed=0)
        assert len(res.windows) == 1 and not res.windows[0].model.learned
        assert len(res.scores) == len(res.windows[0].oos_rebalances)


def test_short_history_window_skipped(small_ctx, caplog):
    res = walk_forward(small_ctx, "jt", WalkForwardConfig(retune_years=2))
    kept = [w.retune_date[:4] for w in res.windows]
    assert "skipped" in caplog.text
    assert all(int(y) - int(str(small_ctx.panel.dates[0])[:4]) >= 3 for y in kept)


def _wf(ctx, kind="mlp", tmp=None):
    grid = HyperGrid(ONE_NEURAL) if kind != "lambdamart" else HyperGrid(
        {"eta": [0.1], "rounds": [10], "max_depth": [2]})
    return walk_forward(ctx, kind, WalkForwardConfig(), TrainConfig(max_epochs=4, patience=2, search_iterations=1),
                        grid=grid, seed=9, checkpoint_dir=tmp)


def test_walk_forward_purity_and_determinism(small_ctx, tmp_path):
    res = _wf(small_ctx, tmp=tmp_path)
    (w,) = res.windows
    assert np.datetime64(w.train_end_date) + 0 <= np.datetime64(w.retune_date)
    last_group_t = max(g.t for g in small_ctx.dataset(end=w.retune_t).groups)
    assert last_group_t + small_ctx.horizon <= w.retune_t
    assert min(res.scores) >= w.retune_t
    assert set(res.provenance.values()) == {0}
    assert len(list(tmp_path.glob("mlp_*.json"))) == 1
    again = _wf(small_ctx)
    for t in res.scores:
        np.testing.assert_array_equal(res.scores[t][1], again.scores[t][1])


@pytest.mark.parametrize("kind", ["mlp", "lambdamart"])
def test_perturbing_future_prices_leaves_frozen_model(small_ctx, kind):
    base = _wf(small_ctx, kind)
    (w,) = base.windows
    oos = w.oos_rebalances
    cut = oos[len(oos) // 2] + 1
    close = small_ctx.panel.close.copy()
    close[cut:] *= np.exp(np.random.default_rng(0).normal(0, 0.2, close[cut:].shape))
    p = small_ctx.panel
    pert = PanelContext(PricePanel(p.dates, p.assets, close))
    moved = _wf(pert, kind)
    if kind == "mlp":
        np.testing.assert_array_equal(moved.windows[0].model.mlp_params.flat(), w.model.mlp_params.flat())
    else:
        assert moved.windows[0].model.trees.to_dict() == w.model.trees.to_dict()
    for t in base.scores:
        if t < cut:
            np.testing.assert_array_equal(moved.scores[t][1], base.scores[t][1])
    assert any(not np.array_equal(moved.scores[t][1], base.scores[t][1]) for t in base.scores if t >= cut)
