"""Finite-difference gradient checks and oracle equivalences for every loss."""

from __future__ import annotations

import numpy as np

from .nn import MlpSpec, backward, forward, grad_check, init_params, relative_error
from .rankers.losses import (
    lambda_gradients,
    listmle_loss,
    listmle_loss_grad,
    listnet_loss_grad,
    make_pairs,
    mse_loss_grad,
    ranknet_loss_grad,
)
from .rng import stream


def _random_list(rng, max_len=10):
    n = int(rng.integers(2, max_len + 1))
    scores = rng.normal(0.0, 1.0, n)
    grades = rng.integers(0, 10, n)
    return scores, grades


def score_gradient_errors(n_lists: int = 100, seed: int = 0, h: float = 1e-5, max_len: int = 10) -> dict:
    """Worst relative error of each loss's score gradient over random lists."""
    rng = stream(seed, "gradcheck")
    worst = {"mse": 0.0, "ranknet": 0.0, "listnet": 0.0, "listmle": 0.0}
    for _ in range(n_lists):
        s, g = _random_list(rng, max_len)
        y = rng.normal(0.0, 1.0, len(s))
        pairs = make_pairs(g)
        order = np.argsort(-(g + 1e-3 * y), kind="stable")
        fns = {
            "mse": lambda x: mse_loss_grad(x, y),
            "ranknet": lambda x: ranknet_loss_grad(x, pairs),
            "listnet": lambda x: listnet_loss_grad(x, g.astype(float)),
            "listmle": lambda x: listmle_loss_grad(x, order),
        }
        for name, fn in fns.items():
            if name == "ranknet" and len(pairs) == 0:
                continue
            worst[name] = max(worst[name], grad_check(fn, s, h=h).max_rel_error)
    return worst


def mlp_gradient_error(seed: int = 0, h: float = 1e-5, n_coords: int = 200) -> float:
    """Backprop vs central differences on a small network, dropout masks held fixed."""
    spec = MlpSpec(n_inputs=6, width=8, dropout=0.3)
    params = init_params(spec, seed)
    rng = stream(seed, "gradcheck", "mlp")
    X = rng.normal(size=(12, 6))
    y = rng.normal(size=12)

    def loss(theta):
        p = params.with_flat(theta)
        s, cache = forward(p, spec, X, train=True, rng=stream(seed, "gradcheck", "mask"))
        value, ds = mse_loss_grad(s, y)
        return value, backward(cache, ds).flat()

    return grad_check(loss, params.flat(), h=h, n_coords=n_coords, rng=rng).max_rel_error


def oracle_errors(n_lists: int = 100, seed: int = 0) -> dict:
    """Stable ListMLE vs the naive suffix sum, and the lambda zero-sum identity."""
    rng = stream(seed, "gradcheck", "oracle")
    listmle_err, lam_sum = 0.0, 0.0
    for _ in range(n_lists):
        s, g = _random_list(rng, 30)
        order = rng.permutation(len(s))
        listmle_err = max(listmle_err, float(relative_error(listmle_loss_grad(s, order)[0], listmle_loss(s, order))))
        lam, _ = lambda_gradients(s, g)
        lam_sum = max(lam_sum, abs(float(lam.sum())))
    return {"listmle_stable_vs_naive": listmle_err, "lambda_sum_zero": lam_sum}


def run_gradcheck_suite(tol: float = 1e-4, n_lists: int = 100, seed: int = 0) -> dict[str, tuple[float, bool]]:
    """Name -> (max error, passed). Gradient checks use ``tol``; oracles use a tight fixed bound."""
    report = {}
    for name, err in score_gradient_errors(n_lists, seed).items():
        report[f"{name} score gradient"] = (err, err <= tol)
    err = mlp_gradient_error(seed)
    report["mlp backprop"] = (err, err <= tol)
    for name, err in oracle_errors(n_lists, seed).items():
        bound = min(tol, 1e-9)
        report[name] = (err, err <= bound)
    return report
