"""PNG figures: cumulative returns per model and mean decile returns."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def plot_cumulative(cumulative: pd.DataFrame, path, title: str = "Cumulative returns (rescaled)") -> None:
    """``cumulative`` has a ``date`` column plus one column of wealth-minus-one per model."""
    fig, ax = plt.subplots(figsize=(9, 5))
    dates = pd.to_datetime(cumulative["date"])
    for col in cumulative.columns:
        if col != "date":
            ax.plot(dates, cumulative[col], label=col, lw=1.2)
    ax.set_yscale("symlog", linthresh=1.0)
    ax.set_ylabel("cumulative return")
    ax.set_title(title)
    ax.legend(ncol=4, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_deciles(decile_means: pd.DataFrame, path) -> None:
    """Bar chart of annualized mean decile returns; rows are models, columns deciles 1..10."""
    n_models = len(decile_means)
    fig, ax = plt.subplots(figsize=(10, 5))
    width = 0.8 / max(n_models, 1)
    x = np.arange(decile_means.shape[1])
    for i, (name, row) in enumerate(decile_means.iterrows()):
        ax.bar(x + i * width, row.to_numpy(), width, label=name)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([str(d + 1) for d in x])
    ax.set_xlabel("decile (10 = highest scores)")
    ax.set_ylabel("annualized mean return")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.legend(ncol=4, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
