"""The score-model container, dispatch, and the JSON checkpoint format.

Checkpoint layout (``format_version`` 1)::

    {
      "format": "ltrcsm-model",
      "format_version": 1,
      "kind": "listnet",
      "seed": 123,
      "standardize": true,
      "clip": 5.0,
      "hyperparams": {...},
      "meta": {...},
      "mlp": {"spec": {...}, "weights": [[...]], "biases": [[...]]},   # neural kinds
      "trees": {"eta": ..., "max_depth": ..., "trees": [                # lambdamart
          {"feature": [...], "threshold": [...], "left": [...],
           "right": [...], "value": [...]}, ...]}
    }

Node arrays index into each other; ``feature == -1`` marks a leaf.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..features import CLIP, standardize_cross_section
from ..nn import MlpParams, MlpSpec, predict
from .heuristics import score_baz, score_jt, score_random
from .lambdamart import TreeEnsemble

HEURISTIC_KINDS = ("rand", "jt", "baz")
NEURAL_KINDS = ("mlp", "ranknet", "listnet", "listmle")
TREE_KINDS = ("lambdamart",)
KINDS = HEURISTIC_KINDS + NEURAL_KINDS + TREE_KINDS
LTR_KINDS = ("ranknet", "lambdamart", "listnet", "listmle")

DISPLAY_NAMES = {
    "rand": "Rand", "jt": "JT", "baz": "Baz", "mlp": "MLP",
    "ranknet": "RNet", "lambdamart": "LM", "listnet": "LNet", "listmle": "LMLE",
}

FORMAT = "ltrcsm-model"
FORMAT_VERSION = 1


@dataclass
class ScoreModel:
    kind: str
    mlp_spec: MlpSpec | None = None
    mlp_params: MlpParams | None = None
    trees: TreeEnsemble | None = None
    standardize: bool = False
    clip: float = CLIP
    seed: int = 0
    hyperparams: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def learned(self) -> bool:
        return self.kind not in HEURISTIC_KINDS


def heuristic_model(kind: str, seed: int = 0) -> ScoreModel:
    if kind not in HEURISTIC_KINDS:
        raise ValueError(f"{kind!r} is not a heuristic model")
    return ScoreModel(kind, seed=seed)


def score(model: ScoreModel, X: np.ndarray, date=None) -> np.ndarray:
    """Scores for one rebalance cross-section given its raw feature rows."""
    X = np.asarray(X, dtype=float)
    kind = model.kind
    if kind == "rand":
        if date is None:
            raise ValueError("random scores need the rebalance date")
        return score_random(len(X), model.seed, date)
    if kind == "jt":
        return score_jt(X)
    if kind == "baz":
        return score_baz(X)
    Z = standardize_cross_section(X, model.clip) if model.standardize else X
    if kind in NEURAL_KINDS:
        return predict(model.mlp_params, model.mlp_spec, Z)
    if kind in TREE_KINDS:
        return model.trees.predict(Z)
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: ScoreModel) -> dict:
    d = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "seed": int(model.seed),
        "standardize": bool(model.standardize),
        "clip": float(model.clip),
        "hyperparams": model.hyperparams,
        "meta": model.meta,
    }
    if model.mlp_params is not None:
        s = model.mlp_spec
        d["mlp"] = {
            "spec": {"n_inputs": s.n_inputs, "width": s.width, "dropout": s.dropout, "n_outputs": s.n_outputs},
            "weights": [w.tolist() for w in model.mlp_params.weights],
            "biases": [b.tolist() for b in model.mlp_params.biases],
        }
    if model.trees is not None:
        d["trees"] = model.trees.to_dict()
    return d


def model_from_dict(d: dict) -> ScoreModel:
    if d.get("format") != FORMAT:
        raise ValueError("not a model checkpoint")
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('format_version')}")
    spec = params = trees = None
    if "mlp" in d:
        spec = MlpSpec(**d["mlp"]["spec"])
        params = MlpParams([np.array(w, dtype=float) for w in d["mlp"]["weights"]],
                           [np.array(b, dtype=float) for b in d["mlp"]["biases"]])
    if "trees" in d:
        trees = TreeEnsemble.from_dict(d["trees"])
    return ScoreModel(d["kind"], spec, params, trees, d["standardize"], d["clip"], d["seed"],
                      d.get("hyperparams", {}), d.get("meta", {}))


def save_model(model: ScoreModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ScoreModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
