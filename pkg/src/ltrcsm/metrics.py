"""Financial and ranking performance metrics.

Financial statistics are computed on monthly return series and annualized
with 12 periods per year. Ranking statistics are computed per rebalance and
averaged with equal weight across months.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

logger = logging.getLogger(__name__)

PERIODS_PER_YEAR = 12
MAX_GRADE = 9

PERFORMANCE_LABELS = {
    "expected_return": "E[returns]",
    "volatility": "Volatility",
    "sharpe": "Sharpe",
    "downside_deviation": "Downside Dev.",
    "max_drawdown": "MDD",
    "sortino": "Sortino",
    "calmar": "Calmar",
    "pct_positive": "% +ve Returns",
    "profit_loss_ratio": "Avg. P / Avg. L",
}

RANKING_LABELS = {
    "kendall_tau": "Kendall's Tau",
    "ndcg_long": "NDCG@{k} (Longs)",
    "ndcg_short": "NDCG@{k} (Shorts)",
}


@dataclass(frozen=True)
class FinancialSummary:
    expected_return: float
    volatility: float
    sharpe: float
    downside_deviation: float
    max_drawdown: float
    sortino: float
    calmar: float
    pct_positive: float
    profit_loss_ratio: float

    def as_row(self) -> dict:
        return {PERFORMANCE_LABELS[k]: v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class RankingSummary:
    kendall_tau: float
    ndcg_long: float
    ndcg_short: float
    k: int = 100
    n_months: int = 0

    def as_row(self) -> dict:
        return {
            RANKING_LABELS["kendall_tau"]: self.kendall_tau,
            RANKING_LABELS["ndcg_long"].format(k=self.k): self.ndcg_long,
            RANKING_LABELS["ndcg_short"].format(k=self.k): self.ndcg_short,
        }


# ---------------------------------------------------------------------------
# financial


def annualized_volatility(returns) -> float:
    r = np.asarray(returns, dtype=float)
    return float(np.std(r, ddof=1) * np.sqrt(PERIODS_PER_YEAR))


def downside_deviation(returns) -> float:
    """Annualized root-mean-square of ``min(r, 0)`` over all months (target return 0)."""
    r = np.asarray(returns, dtype=float)
    return float(np.sqrt(np.mean(np.minimum(r, 0.0) ** 2)) * np.sqrt(PERIODS_PER_YEAR))


def max_drawdown_from_equity(equity) -> float:
    eq = np.asarray(equity, dtype=float)
    peak = np.maximum.accumulate(eq)
    return float(np.max(1.0 - eq / peak)) if len(eq) else 0.0


def max_drawdown(returns) -> float:
    """Largest peak-to-trough loss of the compounded equity curve starting at 1."""
    r = np.asarray(returns, dtype=float)
    return max_drawdown_from_equity(np.concatenate([[1.0], np.cumprod(1.0 + r)]))


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return np.inf if num > 0 else (-np.inf if num < 0 else np.nan)


def financial_summary(returns) -> FinancialSummary:
    r = np.asarray(returns, dtype=float)
    r = r[np.isfinite(r)]
    if len(r) < 12:
        raise ValueError(f"need at least 12 monthly returns, got {len(r)}")
    e = float(np.mean(r) * PERIODS_PER_YEAR)
    vol = annualized_volatility(r)
    dd = downside_deviation(r)
    mdd = max_drawdown(r)
    pos, neg = r[r > 0], r[r < 0]
    pl = float(np.mean(pos) / abs(np.mean(neg))) if len(pos) and len(neg) else np.inf
    return FinancialSummary(e, vol, _ratio(e, vol), dd, mdd, _ratio(e, dd), _ratio(e, mdd),
                            float(np.mean(r > 0)), pl)


# ---------------------------------------------------------------------------
# ranking


def kendall_tau(x, y) -> float:
    """Tie-corrected (tau-b) rank correlation; NaN if either input is constant."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2:
        return np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(stats.kendalltau(x, y, variant="b").statistic)


def gains(grades) -> np.ndarray:
    return np.power(2.0, np.asarray(grades, dtype=float)) - 1.0


def discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def dcg_at_k(ordered_grades, k: int) -> float:
    g = gains(ordered_grades)[:k]
    return float(np.sum(g * discounts(len(g))))


def ndcg_at_k(scores, grades, k: int = 100, side: str = "long") -> float:
    """NDCG@k of the ordering induced by ``scores``.

    Long side ranks by descending score against ``grades``; short side ranks
    by ascending score against reversed grades ``9 - grade``. Equal scores
    keep input order. A list whose ideal DCG is zero scores 0.
    """
    scores = np.asarray(scores, dtype=float)
    grades = np.asarray(grades, dtype=float)
    if side == "short":
        scores, grades = -scores, MAX_GRADE - grades
    elif side != "long":
        raise ValueError(f"side must be 'long' or 'short', got {side!r}")
    k = min(k, len(scores))
    order = np.argsort(-scores, kind="stable")
    ideal = dcg_at_k(np.sort(grades)[::-1], k)
    if ideal <= 0:
        logger.warning("all relevance grades are zero; NDCG defined as 0")
        return 0.0
    return dcg_at_k(grades[order], k) / ideal


def ranking_summary(months, k: int = 100) -> tuple[RankingSummary, pd.DataFrame]:
    """Average per-month Kendall's tau and long/short NDCG@k.

    ``months`` is an iterable of ``(date, scores, realized_returns, grades)``.
    """
    rows = []
    for date, scores, realized, grades in months:
        rows.append({
            "date": date,
            "kendall_tau": kendall_tau(scores, realized),
            "ndcg_long": ndcg_at_k(scores, grades, k, "long"),
            "ndcg_short": ndcg_at_k(scores, grades, k, "short"),
            "n_assets": len(scores),
        })
    frame = pd.DataFrame(rows, columns=["date", "kendall_tau", "ndcg_long", "ndcg_short", "n_assets"])
    summary = summary_from_monthly(frame, k)
    return summary, frame


def summary_from_monthly(frame: pd.DataFrame, k: int = 100) -> RankingSummary:
    if frame.empty:
        return RankingSummary(np.nan, np.nan, np.nan, k, 0)
    return RankingSummary(float(np.nanmean(frame["kendall_tau"])), float(frame["ndcg_long"].mean()),
                          float(frame["ndcg_short"].mean()), k, len(frame))
