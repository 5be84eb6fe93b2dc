"""Command-line entry point: generate, features, backtest, report, gradcheck.

Configuration is a JSON file (see :data:`DEFAULT_CONFIG`); command-line flags
override it. The log level comes from ``LTRCSM_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .backtest import N_DECILES, BacktestConfig, equity_curve, run_backtest
from .labeling import build_dataset, write_dataset_csv
from .market_data import PanelError, load_prices, synthetic_panel, write_prices
from .metrics import PERFORMANCE_LABELS, financial_summary, summary_from_monthly
from .rankers.models import DISPLAY_NAMES, KINDS, NEURAL_KINDS, TREE_KINDS, model_to_dict
from .tuning import HyperGrid, PanelContext, TrainConfig, WalkForwardConfig, walk_forward

logger = logging.getLogger("ltrcsm")

DEFAULT_CONFIG = {
    "data": {
        "csv": None,
        "synthetic": {"n_assets": 200, "n_years": 20, "signal_strength": 1.0},
    },
    "models": ["rand", "jt", "baz", "mlp", "ranknet", "lambdamart", "listnet", "listmle"],
    "seed": 0,
    "out": "runs/default",
    "walk_forward": {"retune_years": 5, "min_history_years": 3.0, "window": "expanding", "rolling_years": None},
    "train": {"max_epochs": 100, "patience": 25, "train_fraction": 0.9, "search_iterations": 50, "dedup": True,
              "ranknet_sigma": 1.0, "listnet_target": "grade", "lambdamart_min_leaf": 20, "k_eval": 100},
    "grids": {},
    "backtest": {"n_side": 100, "vol_target": 0.15, "k": 100, "rescale": "expost"},
}

FLOAT_FORMAT = "%.12g"
TUNED_KINDS = NEURAL_KINDS + TREE_KINDS


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_keys(user: dict, ref: dict, where: str = "") -> None:
    unknown = sorted(set(user) - set(ref))
    if unknown:
        raise ConfigError(f"unknown config keys{' in ' + where if where else ''}: {unknown}")
    for k, v in user.items():
        if isinstance(ref[k], dict) and k != "grids":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be an object")
            _check_keys(v, ref[k], f"{where}{k}.")


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    layers = [overrides or {}]
    if path:
        with open(path) as fh:
            layers.insert(0, json.load(fh))
    for extra in layers:
        _check_keys(extra, DEFAULT_CONFIG)
        cfg = _merge(cfg, extra)
    bad_grids = sorted(set(cfg["grids"]) - set(TUNED_KINDS))
    if bad_grids:
        raise ConfigError(f"grids given for untuned or unknown models: {bad_grids}")
    bad = [m for m in cfg["models"] if m not in KINDS]
    if bad:
        raise ConfigError(f"unknown models {bad}; choose from {list(KINDS)}")
    phi = cfg["data"]["synthetic"].get("signal_strength", 1.0)
    if not 0.0 <= phi <= 1.0:
        raise ConfigError("signal_strength must lie in [0, 1]")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def versions() -> dict:
    import matplotlib
    return {"ltrcsm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "pandas": pd.__version__, "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _csv(frame: pd.DataFrame, path, index=False) -> None:
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")


def load_panel(cfg: dict):
    if cfg["data"].get("csv"):
        return load_prices(cfg["data"]["csv"])
    syn = cfg["data"]["synthetic"]
    return synthetic_panel(syn.get("n_assets", 200), syn.get("n_years", 20), syn.get("signal_strength", 1.0),
                           seed=cfg["seed"])


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    syn = cfg["data"]["synthetic"]
    panel = synthetic_panel(syn["n_assets"], syn["n_years"], syn["signal_strength"], seed=cfg["seed"])
    out = Path(args.out or "prices.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_prices(panel, out)
    except OSError as exc:
        logger.error("cannot write %s: %s", out, exc)
        return 2
    _write_json({"command": "generate", "seed": cfg["seed"], "synthetic": syn, "rows": panel.n_dates * panel.n_assets,
                 "versions": versions()}, out.with_suffix(".manifest.json"))
    print(f"wrote {panel.n_dates * panel.n_assets} rows to {out}")
    return 0


def cmd_features(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    panel = load_panel(cfg)
    ctx = PanelContext(panel)
    ds = build_dataset(panel, ctx.vol, ctx.calendar, ctx.cube, end=panel.n_dates - 1)
    out = Path(args.out or "features.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(ds, panel, out)
    print(f"wrote {ds.n_rows} rows over {len(ds)} rebalances to {out}")
    return 0


def _model_outputs(kind, panel, ctx, wf_result, bt, model_dir: Path) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    _csv(bt.returns, model_dir / "returns.csv")
    _csv(bt.positions, model_dir / "positions.csv")
    _csv(bt.ranking_monthly, model_dir / "ranking_monthly.csv")
    windows = []
    for w in wf_result.windows:
        m = w.manifest()
        if w.oos_rebalances:
            m["oos_start"] = str(panel.dates[w.oos_rebalances[0]])
            m["oos_end"] = str(panel.dates[w.oos_rebalances[-1]])
        if w.model.learned:
            ck = model_dir / "checkpoints"
            ck.mkdir(exist_ok=True)
            name = f"{w.retune_date}.json"
            with open(ck / name, "w") as fh:
                json.dump(model_to_dict(w.model), fh, sort_keys=True)
                fh.write("\n")
            m["checkpoint"] = f"checkpoints/{name}"
        windows.append(m)
    _write_json(windows, model_dir / "windows.json")


def render_reports(out: Path, kinds: list[str], k: int, figures: bool = True) -> dict:
    """Tables and figures from the per-model CSVs under ``out/models``."""
    metrics_rows, ranking_rows, decile_rows, cumulative, decile_means = {}, {}, [], None, {}
    for kind in kinds:
        mdir = out / "models" / kind
        rets = pd.read_csv(mdir / "returns.csv")
        name = DISPLAY_NAMES[kind]
        metrics_rows[name] = financial_summary(rets["rescaled"].to_numpy()).as_row()
        monthly = pd.read_csv(mdir / "ranking_monthly.csv")
        ranking_rows[name] = summary_from_monthly(monthly, k).as_row()
        for d in range(1, N_DECILES + 1):
            row = financial_summary(rets[f"decile_{d}"].to_numpy()).as_row()
            decile_rows.append({"model": name, "decile": d, **row})
        decile_means[name] = [12 * rets[f"decile_{d}"].mean() for d in range(1, N_DECILES + 1)]
        curve = pd.DataFrame({"date": rets["date"], name: equity_curve(rets["rescaled"])[1:] - 1.0})
        cumulative = curve if cumulative is None else cumulative.merge(curve, on="date", how="outer")
    metrics = pd.DataFrame.from_dict(metrics_rows, orient="index")[list(PERFORMANCE_LABELS.values())]
    ranking = pd.DataFrame.from_dict(ranking_rows, orient="index")
    _csv(metrics.rename_axis("model"), out / "metrics.csv", index=True)
    _csv(ranking.rename_axis("model"), out / "ranking_metrics.csv", index=True)
    _csv(pd.DataFrame(decile_rows), out / "deciles.csv")
    cumulative = cumulative.sort_values("date").reset_index(drop=True)
    _csv(cumulative, out / "cumulative_returns.csv")
    _write_json(metrics.to_dict(orient="index"), out / "metrics.json")
    _write_json(ranking.to_dict(orient="index"), out / "ranking_metrics.json")
    if figures:
        from .plotting import plot_cumulative, plot_deciles
        (out / "figures").mkdir(exist_ok=True)
        plot_cumulative(cumulative, out / "figures" / "cumulative_returns.png")
        plot_deciles(pd.DataFrame.from_dict(decile_means, orient="index"), out / "figures" / "deciles.png")
    return {"metrics": metrics, "ranking": ranking}


def cmd_backtest(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    panel = load_panel(cfg)
    ctx = PanelContext(panel)
    wf = WalkForwardConfig(**cfg["walk_forward"])
    tc = TrainConfig(**cfg["train"])
    bcfg = BacktestConfig(**cfg["backtest"])
    done, failed = [], {}
    for kind in cfg["models"]:
        try:
            grid = HyperGrid.for_kind(kind, cfg["grids"].get(kind)) if kind in TUNED_KINDS else None
            result = walk_forward(ctx, kind, wf, tc, grid=grid, seed=cfg["seed"])
            bt = run_backtest(panel, ctx.vol, result.scores, bcfg, ctx.calendar)
            _model_outputs(kind, panel, ctx, result, bt, out / "models" / kind)
            done.append(kind)
            logger.info("%s: done (%d months)", kind, len(bt.returns))
        except Exception as exc:  # keep the other models' results
            logger.error("%s failed: %s", kind, exc)
            failed[kind] = str(exc)
    if done:
        render_reports(out, done, bcfg.k, figures=not args.no_figures)
    manifest = {
        "command": "backtest",
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "seed_streams": ["data", "init", "dropout", "batches", "search", "random-model"],
        "completed": done,
        "failed": failed,
        "panel": {"n_dates": panel.n_dates, "n_assets": panel.n_assets,
                  "start": str(panel.dates[0]), "end": str(panel.dates[-1])},
        "versions": versions(),
    }
    _write_json(manifest, out / "manifest.json")
    print(f"{len(done)}/{len(cfg['models'])} models completed; results in {out}")
    return 0 if not failed else 1


def cmd_report(args) -> int:
    out = Path(args.run)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        kinds = manifest["completed"]
        k = args.k or manifest["config"]["backtest"]["k"]
    else:
        kinds = sorted(p.name for p in (out / "models").iterdir() if p.is_dir())
        k = args.k or 100
    tables = render_reports(out, kinds, k, figures=not args.no_figures)
    with pd.option_context("display.width", 160, "display.max_columns", 20):
        print(tables["metrics"].round(3).to_string())
        print()
        print(tables["ranking"].round(3).to_string())
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_gradcheck_suite
    report = run_gradcheck_suite(tol=args.tol, n_lists=args.lists, seed=args.seed or 0)
    for name, (err, ok) in report.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name:32s} max_err={err:.3e}")
    return 0 if all(ok for _, ok in report.values()) else 1


# ---------------------------------------------------------------------------
# argument parsing


def _flag_overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "models", None):
        o["models"] = [m.strip() for m in args.models.split(",") if m.strip()]
    if getattr(args, "out", None) and args.command == "backtest":
        o["out"] = args.out
    bt = {}
    if getattr(args, "n_side", None) is not None:
        bt["n_side"] = args.n_side
    if getattr(args, "vol_target", None) is not None:
        bt["vol_target"] = args.vol_target
    if getattr(args, "k", None) is not None:
        bt["k"] = args.k
    if bt:
        o["backtest"] = bt
    data = {}
    if getattr(args, "data", None):
        data["csv"] = args.data
    syn = {}
    for flag, key in (("n_assets", "n_assets"), ("n_years", "n_years"), ("signal", "signal_strength")):
        if getattr(args, flag, None) is not None:
            syn[key] = getattr(args, flag)
    if syn:
        data["synthetic"] = syn
    if data:
        o["data"] = data
    return o


def _signal(value: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("signal strength must lie in [0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltrcsm", description="Learning-to-rank cross-sectional momentum backtests")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help=out_help)

    def data_flags(sp):
        sp.add_argument("--data", help="long-format price CSV (date,asset,close); synthetic if omitted")
        sp.add_argument("--n-assets", type=int)
        sp.add_argument("--n-years", type=int)
        sp.add_argument("--signal", type=_signal, help="planted momentum strength in [0, 1]")

    g = sub.add_parser("generate", help="write a synthetic price panel")
    common(g, "output CSV path")
    g.add_argument("--n-assets", type=int)
    g.add_argument("--n-years", type=int)
    g.add_argument("--signal", type=_signal, help="planted momentum strength in [0, 1]")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("features", help="dump the feature/label dataset")
    common(f, "output CSV path")
    data_flags(f)
    f.set_defaults(func=cmd_features)

    b = sub.add_parser("backtest", help="walk-forward training and backtest")
    common(b, "output directory")
    data_flags(b)
    b.add_argument("--models", help="comma-separated list, e.g. rand,jt,lambdamart")
    b.add_argument("--n-side", type=int, help="positions per side")
    b.add_argument("--vol-target", type=float, help="annualized volatility target")
    b.add_argument("--k", type=int, help="NDCG cutoff")
    b.add_argument("--no-figures", action="store_true")
    b.set_defaults(func=cmd_backtest)

    r = sub.add_parser("report", help="re-render tables and figures from a run directory")
    r.add_argument("run", help="run directory")
    r.add_argument("--k", type=int)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("gradcheck", help="finite-difference and oracle checks for every loss")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--lists", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LTRCSM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PanelError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
