"""A two-hidden-layer ReLU network with inverted dropout, hand-written
backpropagation, Adam with global-norm clipping, and a central finite
difference gradient checker.

The network maps a batch of feature rows to one real score per row. Losses
live elsewhere; :func:`backward` only needs ``dL/dscores``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rng import stream


@dataclass(frozen=True)
class MlpSpec:
    n_inputs: int = 22
    width: int = 64
    dropout: float = 0.0
    n_outputs: int = 1

    def __post_init__(self):
        if self.width < 1 or self.n_inputs < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def shapes(self):
        w = self.width
        return [(self.n_inputs, w), (w, w), (w, self.n_outputs)]


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, x: np.ndarray) -> "MlpParams":
        out, k = [], 0
        for a in self.arrays():
            out.append(x[k: k + a.size].reshape(a.shape).copy())
            k += a.size
        n = len(self.weights)
        return MlpParams(out[:n], out[n:])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(spec: MlpSpec, seed) -> MlpParams:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases.

    ``seed`` is an int (drawn through the ``init`` sub-stream) or a generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "init")
    weights = [rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)) for fan_in, fan_out in spec.shapes]
    biases = [np.zeros(fan_out) for _, fan_out in spec.shapes]
    return MlpParams(weights, biases)


@dataclass
class Cache:
    X: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    masks: list[np.ndarray | None]
    params: MlpParams


def forward(params: MlpParams, spec: MlpSpec, X: np.ndarray, *, train: bool = False,
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, Cache]:
    """Scores for each row of ``X`` plus the activations needed by :func:`backward`.

    In training mode each hidden activation is multiplied by a Bernoulli keep
    mask scaled by ``1 / (1 - dropout)``; evaluation mode is the plain network.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.n_inputs:
        raise ValueError(f"expected (n, {spec.n_inputs}) inputs, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    drop = spec.dropout if train else 0.0
    if drop > 0 and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    h = X
    pre, post, masks = [], [], []
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ W + b
        a = np.maximum(z, 0.0)
        if drop > 0:
            mask = (rng.random(a.shape) >= drop) / (1.0 - drop)
            a = a * mask
        else:
            mask = None
        pre.append(z)
        post.append(a)
        masks.append(mask)
        h = a
    out = h @ params.weights[-1] + params.biases[-1]
    return out[:, 0], Cache(X, pre, post, masks, params)


def backward(cache: Cache, dscores: np.ndarray) -> MlpParams:
    """Exact gradients of the loss w.r.t. every parameter, replaying dropout masks."""
    params = cache.params
    g = np.asarray(dscores, dtype=np.float64)
    if g.shape != (cache.X.shape[0],):
        raise ValueError(f"dscores shape {g.shape} does not match batch of {cache.X.shape[0]}")
    g = g[:, None]
    n_layers = len(params.weights)
    gW, gb = [None] * n_layers, [None] * n_layers
    inputs = [cache.X, *cache.post]
    for k in range(n_layers - 1, -1, -1):
        gW[k] = inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        if k == 0:
            break
        g = g @ params.weights[k].T
        if cache.masks[k - 1] is not None:
            g = g * cache.masks[k - 1]
        g = g * (cache.pre[k - 1] > 0)
    return MlpParams(gW, gb)


def predict(params: MlpParams, spec: MlpSpec, X: np.ndarray) -> np.ndarray:
    return forward(params, spec, X)[0]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "AdamState":
        return cls(lr, [np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def clip_by_global_norm(arrays: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return arrays
    norm = global_norm(arrays)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        return [a * scale for a in arrays]
    return arrays


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams, max_grad_norm: float | None = None) -> MlpParams:
    """Clip gradients to ``max_grad_norm`` then apply one bias-corrected Adam update in place."""
    gs = clip_by_global_norm(grads.arrays(), max_grad_norm)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params.arrays(), gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst_index: int = -1
    errors: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5,
                       coords=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    coords = range(x.size) if coords is None else coords
    out = np.zeros(x.size)
    for i in coords:
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        out[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return out.reshape(x.shape)


def grad_check(loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, *,
               tol: float = 1e-4, h: float = 1e-5, n_coords: int | None = None,
               rng: np.random.Generator | None = None, grad: np.ndarray | None = None) -> GradCheckReport:
    """Compare an analytic gradient with central differences.

    ``loss_fn(x)`` returns ``(loss, grad)``. Pass ``grad`` to check a
    gradient other than the one ``loss_fn`` reports (useful as a negative
    control). With ``n_coords`` only a random subset of coordinates is probed.
    """
    x = np.asarray(x, dtype=float)
    analytic = np.asarray(loss_fn(x)[1] if grad is None else grad, dtype=float).ravel()
    if n_coords is not None and n_coords < x.size:
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(x.size, n_coords, replace=False))
    else:
        coords = np.arange(x.size)
    numeric = numerical_gradient(lambda z: loss_fn(z)[0], x, h, coords).ravel()
    errs = relative_error(analytic[coords], numeric[coords])
    worst = int(np.argmax(errs)) if len(errs) else -1
    return GradCheckReport(float(errs.max()) if len(errs) else 0.0, tol, len(coords),
                           int(coords[worst]) if worst >= 0 else -1, errs)
