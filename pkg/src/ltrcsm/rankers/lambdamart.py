"""LambdaMART: gradient boosted regression trees fitted to lambda gradients.

Trees are grown level-wise with greedy variance-reduction splits on the
pseudo-response ``-lambda``. Candidate thresholds are the distinct training
values of each feature (subsampled by rank to at most ``max_bins``), so a
split is ``x <= threshold`` with ``threshold`` an observed value. Leaves take a
single Newton step ``-sum(lambda) / (sum(w) + ridge)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..metrics import ndcg_at_k
from .losses import lambda_gradients

logger = logging.getLogger(__name__)

RIDGE = 1e-6
MAX_BINS = 256


@dataclass
class RegressionTree:
    feature: np.ndarray  # -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[k] + 1
                depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(np.array(d["feature"], dtype=int), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=int), np.array(d["right"], dtype=int),
                   np.array(d["value"], dtype=float))


@dataclass
class TreeEnsemble:
    trees: list[RegressionTree] = field(default_factory=list)
    eta: float = 0.1
    max_depth: int = 6

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        for tree in self.trees:
            out += self.eta * tree.predict(X)
        return out

    def truncated(self, rounds: int) -> "TreeEnsemble":
        return TreeEnsemble(self.trees[:rounds], self.eta, self.max_depth)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "max_depth": self.max_depth, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], float(d["eta"]), int(d["max_depth"]))


class Binner:
    """Per-feature candidate thresholds chosen by rank among distinct training values."""

    def __init__(self, X: np.ndarray, max_bins: int = MAX_BINS):
        X = np.asarray(X, dtype=float)
        self.edges = []
        for f in range(X.shape[1]):
            uniq = np.unique(X[:, f])
            if len(uniq) > max_bins:
                idx = np.round(np.linspace(0, len(uniq) - 1, max_bins)).astype(int)
                uniq = uniq[np.unique(idx)]
            self.edges.append(uniq)
        self.n_bins = max(len(e) for e in self.edges) if self.edges else 0

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Bin code ``k`` means ``edges[k-1] < x <= edges[k]``."""
        X = np.asarray(X, dtype=float)
        codes = np.empty(X.shape, dtype=np.int32)
        for f, e in enumerate(self.edges):
            codes[:, f] = np.minimum(np.searchsorted(e, X[:, f], side="left"), len(e) - 1)
        return codes


def fit_tree(X: np.ndarray, lambdas: np.ndarray, weights: np.ndarray, max_depth: int,
             min_leaf: int = 20, *, binner: Binner | None = None, codes: np.ndarray | None = None,
             ridge: float = RIDGE) -> RegressionTree:
    """Grow one regression tree on the pseudo-response ``-lambdas``."""
    X = np.asarray(X, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if binner is None:
        binner = Binner(X)
    if codes is None:
        codes = binner.transform(X)
    n, n_feat = X.shape
    nb = binner.n_bins
    resp = -lambdas
    tol = 1e-10 * max(1.0, float(np.sum(resp ** 2)))
    offsets = (np.arange(n_feat) * nb)[None, :]

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.sum(resp[idx]) / (np.sum(weights[idx]) + ridge)) if len(idx) else 0.0)
        return len(feature) - 1

    root = new_node(np.arange(n))
    frontier = [(root, np.arange(n))]
    for _depth in range(max_depth):
        nxt = []
        for node, idx in frontier:
            m = len(idx)
            if m < 2 * min_leaf:
                continue
            flat = (codes[idx] + offsets).ravel()
            size = n_feat * nb
            cnt = np.bincount(flat, minlength=size).reshape(n_feat, nb)
            tot = np.bincount(flat, weights=np.repeat(resp[idx], n_feat), minlength=size).reshape(n_feat, nb)
            n_left = np.cumsum(cnt, axis=1)
            s_left = np.cumsum(tot, axis=1)
            s_all = float(np.sum(resp[idx]))
            n_right = m - n_left
            s_right = s_all - s_left
            valid = (n_left >= min_leaf) & (n_right >= min_leaf)
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = s_left ** 2 / n_left + s_right ** 2 / n_right - s_all ** 2 / m
            gain = np.where(valid, gain, -np.inf)
            best = int(np.argmax(gain))
            f, b = divmod(best, nb)
            if not np.isfinite(gain[f, b]) or gain[f, b] <= tol:
                continue
            go_left = codes[idx, f] <= b
            li, ri = idx[go_left], idx[~go_left]
            feature[node] = f
            threshold[node] = float(binner.edges[f][b])
            left[node] = new_node(li)
            right[node] = new_node(ri)
            nxt += [(left[node], li), (right[node], ri)]
        frontier = nxt
        if not frontier:
            break
    return RegressionTree(np.array(feature, dtype=int), np.array(threshold, dtype=float),
                          np.array(left, dtype=int), np.array(right, dtype=int), np.array(value, dtype=float))


@dataclass
class LambdaMartHistory:
    train_ndcg: list[float] = field(default_factory=list)
    valid_ndcg: list[float] = field(default_factory=list)
    best_round: int = 0


def _mean_ndcg(groups, scores_per_group, k):
    if not groups:
        return np.nan
    return float(np.mean([ndcg_at_k(s, g.grades, k) for g, s in zip(groups, scores_per_group)]))


def lambdamart_train(train_groups, valid_groups=(), *, eta: float = 0.1, rounds: int = 100,
                     max_depth: int = 6, min_leaf: int = 20, sigma: float = 1.0, k_eval: int = 100,
                     seed: int = 0, features: str = "Xs") -> tuple[TreeEnsemble, LambdaMartHistory]:
    """Boost ``rounds`` trees; return the prefix with the best validation NDCG@k.

    ``train_groups``/``valid_groups`` are ranking groups exposing ``grades``
    and a feature matrix attribute named by ``features``. Training is fully
    deterministic; ``seed`` is accepted for interface symmetry with the
    neural rankers and recorded by callers.
    """
    del seed
    train_groups = list(train_groups)
    valid_groups = list(valid_groups)
    hist = LambdaMartHistory()
    ens = TreeEnsemble([], eta, max_depth)
    if rounds <= 0 or not train_groups:
        return ens, hist
    Xtr = np.vstack([getattr(g, features) for g in train_groups])
    bounds = np.cumsum([0] + [len(g) for g in train_groups])
    binner = Binner(Xtr)
    codes = binner.transform(Xtr)
    f_tr = np.zeros(len(Xtr))
    Xva = [getattr(g, features) for g in valid_groups]
    f_va = [np.zeros(len(x)) for x in Xva]
    lambdas = np.zeros(len(Xtr))
    weights = np.zeros(len(Xtr))
    best_val, best_round = -np.inf, 0
    for r in range(rounds):
        for gi, g in enumerate(train_groups):
            sl = slice(bounds[gi], bounds[gi + 1])
            lambdas[sl], weights[sl] = lambda_gradients(f_tr[sl], g.grades, sigma)
        tree = fit_tree(Xtr, lambdas, weights, max_depth, min_leaf, binner=binner, codes=codes)
        ens.trees.append(tree)
        f_tr += eta * tree.predict(Xtr)
        hist.train_ndcg.append(_mean_ndcg(train_groups, [f_tr[bounds[i]:bounds[i + 1]]
                                                         for i in range(len(train_groups))], k_eval))
        if valid_groups:
            for i, x in enumerate(Xva):
                f_va[i] += eta * tree.predict(x)
            v = _mean_ndcg(valid_groups, f_va, k_eval)
            hist.valid_ndcg.append(v)
            if v > best_val:
                best_val, best_round = v, r + 1
    if valid_groups:
        hist.best_round = best_round
        return ens.truncated(best_round), hist
    hist.best_round = rounds
    return ens, hist
