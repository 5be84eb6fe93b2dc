"""Score-space losses and their gradients.

Every ``*_loss_grad`` returns ``(loss, dL/dscores)`` for one list of scores;
the network backward pass takes it from there.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from ..metrics import discounts, gains

logger = logging.getLogger(__name__)


def mse_loss_grad(scores, targets):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(targets, dtype=float)
    diff = s - y
    m = len(s)
    return float(np.mean(diff ** 2)), 2.0 * diff / m


def make_pairs(grades) -> np.ndarray:
    """All index pairs ``(i, j)`` with ``grade[i] > grade[j]``, shape ``(P, 2)``."""
    g = np.asarray(grades)
    i, j = np.nonzero(g[:, None] > g[None, :])
    return np.column_stack([i, j])


def ranknet_loss_grad(scores, pairs, sigma: float = 1.0):
    """Mean pairwise cross entropy ``-log P(i above j)`` over ``pairs``."""
    s = np.asarray(scores, dtype=float)
    grad = np.zeros_like(s)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        logger.debug("ranknet: empty pair set")
        return 0.0, grad
    i, j = pairs[:, 0], pairs[:, 1]
    d = sigma * (s[i] - s[j])
    loss = float(np.mean(np.logaddexp(0.0, -d)))
    coef = -sigma * expit(-d) / len(pairs)
    np.add.at(grad, i, coef)
    np.add.at(grad, j, -coef)
    return loss, grad


def listnet_loss_grad(scores, targets):
    """Cross entropy between top-one distributions ``softmax(targets)`` and ``softmax(scores)``."""
    s = np.asarray(scores, dtype=float)
    p_y = softmax(np.asarray(targets, dtype=float))
    log_p_s = log_softmax(s)
    loss = float(-np.sum(p_y * log_p_s))
    return loss, np.exp(log_p_s) - p_y


def listmle_loss_grad(scores, order):
    """Plackett-Luce negative log-likelihood of the permutation ``order`` (best first)."""
    s = np.asarray(scores, dtype=float)
    order = np.asarray(order, dtype=int)
    sp = s[order]
    # suffix log-sum-exp: lse[j] = log sum_{k >= j} exp(sp[k])
    lse = np.logaddexp.accumulate(sp[::-1])[::-1]
    loss = float(np.sum(lse - sp))
    # d/d sp[m] = sum_{j <= m} exp(sp[m] - lse[j]) - 1
    acc = np.logaddexp.accumulate(-lse)
    g_sorted = np.exp(sp + acc) - 1.0
    grad = np.empty_like(s)
    grad[order] = g_sorted
    return loss, grad


def listmle_loss(scores, order) -> float:
    s = np.asarray(scores, dtype=float)[np.asarray(order, dtype=int)]
    return float(sum(logsumexp(s[j:]) - s[j] for j in range(len(s))))


def ranked_positions(scores) -> np.ndarray:
    """1-based position of each item when sorted by descending score (ties by index)."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    pos = np.empty(len(order), dtype=int)
    pos[order] = np.arange(1, len(order) + 1)
    return pos


def ideal_dcg(grades) -> float:
    g = np.sort(gains(grades))[::-1]
    return float(np.sum(g * discounts(len(g))))


def ndcg_delta(grades, positions, i: int, j: int, idcg: float | None = None) -> float:
    """|change in full-list NDCG| from swapping items ``i`` and ``j`` in the current ranking."""
    grades = np.asarray(grades, dtype=float)
    idcg = ideal_dcg(grades) if idcg is None else idcg
    if idcg <= 0:
        return 0.0
    gi, gj = gains(grades[[i, j]])
    di, dj = 1.0 / np.log2(np.asarray(positions)[[i, j]] + 1.0)
    return float(abs((gi - gj) * (di - dj)) / idcg)


def delta_ndcg_matrix(grades, scores) -> np.ndarray:
    grades = np.asarray(grades, dtype=float)
    idcg = ideal_dcg(grades)
    if idcg <= 0:
        return np.zeros((len(grades), len(grades)))
    g = gains(grades)
    d = 1.0 / np.log2(ranked_positions(scores) + 1.0)
    return np.abs(np.subtract.outer(g, g) * np.subtract.outer(d, d)) / idcg


def lambda_gradients(scores, grades, sigma: float = 1.0):
    """LambdaRank gradients and Newton weights for one list.

    For each pair with ``grade[i] > grade[j]``: ``rho = 1/(1+exp(sigma(s_i-s_j)))``,
    ``lambda_ij = -sigma * rho * |dNDCG|``, ``w_ij = sigma^2 rho (1-rho) |dNDCG|``.
    ``lambda_ij`` is added to ``i`` and subtracted from ``j``; ``w_ij`` is
    added to both. A negative lambda means the item should move up.
    """
    s = np.asarray(scores, dtype=float)
    grades = np.asarray(grades, dtype=float)
    better = grades[:, None] > grades[None, :]
    idcg = ideal_dcg(grades)
    if not better.any() or idcg <= 0:
        return np.zeros_like(s), np.zeros_like(s)
    # |dNDCG| restricted to ordered pairs; gain difference is positive there
    g = gains(grades)
    d = 1.0 / np.log2(ranked_positions(s) + 1.0)
    delta = np.subtract.outer(g, g)
    delta *= np.abs(np.subtract.outer(d, d))
    delta *= better
    delta /= idcg
    rho = np.subtract.outer(s, s)
    rho *= -sigma
    expit(rho, out=rho)
    lam = rho * delta
    lambdas = -sigma * (lam.sum(axis=1) - lam.sum(axis=0))
    rho *= 1.0 - rho
    rho *= delta
    weights = sigma * sigma * (rho.sum(axis=1) + rho.sum(axis=0))
    return lambdas, weights
