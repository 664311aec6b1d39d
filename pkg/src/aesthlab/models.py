"""Shared model interface: batch prediction and JSON persistence for every model kind.

Persisted models are one JSON object with a ``model_kind`` key:

* ``rf``:  ``{params, seed, n_features, trees: [tree, ...]}``
* ``gbt``: ``{params, seed, n_features, base_score, train_rmse, trees}``
* ``svr``: ``{kernel, params, seed, support_vectors, dual_coefs, bias, x_mean, x_scale}``
* ``mlp``: ``{dims, W1, b1, w2, b2, l2, x_mean, x_scale, y_mean, y_scale}``
* ``ols``: ``{intercept, coefficients, feature_names}``

A tree is ``{n_features, feature, threshold, left, right, value, cover}`` as
parallel node arrays. Floats are written with Python's shortest round-trip
repr, so loading reproduces every parameter bit for bit. Training configs
(e.g. the MLP's) are attached by the caller through ``save_model(..., config=...)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .metrics import LinearModel, predict_linear
from .mlp import MlpModel, predict_mlp
from .svr import KernelSpec, SvrModel, SvrParams, predict_svr
from .trees import BoostedModel, BoostParams, ForestModel, ForestParams, Tree, predict_forest, predict_gbt

MODEL_KINDS = ("rf", "gbt", "svr", "svr-linear", "mlp", "ols")


def predict(model, X) -> np.ndarray:
    """Predictions for a matrix of rows (a single row is treated as a 1-row matrix)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, ForestModel):
        return predict_forest(model, X)
    if isinstance(model, BoostedModel):
        return predict_gbt(model, X)
    if isinstance(model, SvrModel):
        return predict_svr(model, X)
    if isinstance(model, MlpModel):
        return predict_mlp(model, X)
    if isinstance(model, LinearModel):
        return predict_linear(model, X)
    if isinstance(model, Tree):
        from .trees import predict_tree

        return predict_tree(model, X)
    raise TypeError(f"not a model: {type(model).__name__}")


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, ForestModel):
        return {
            "model_kind": "rf",
            "params": asdict(model.params),
            "seed": model.seed,
            "n_features": model.n_features,
            "trees": [t.to_dict() for t in model.trees],
        }
    if isinstance(model, BoostedModel):
        return {
            "model_kind": "gbt",
            "params": asdict(model.params),
            "seed": model.seed,
            "n_features": model.n_features,
            "base_score": model.base_score,
            "train_rmse": list(model.train_rmse),
            "trees": [t.to_dict() for t in model.trees],
        }
    if isinstance(model, SvrModel):
        return {
            "model_kind": "svr",
            "kernel": model.kernel.to_dict(),
            "params": asdict(model.params),
            "seed": model.seed,
            "n_features": model.n_features,
            "support_vectors": _arr(model.support_vectors),
            "dual_coefs": _arr(model.dual_coefs),
            "bias": model.bias,
            "x_mean": _arr(model.x_mean),
            "x_scale": _arr(model.x_scale),
            "n_iter": model.n_iter,
            "objective": model.objective,
        }
    if isinstance(model, MlpModel):
        return {
            "model_kind": "mlp",
            "dims": [model.n_features, model.W1.shape[0], 1],
            "W1": _arr(model.W1),
            "b1": _arr(model.b1),
            "w2": _arr(model.w2),
            "b2": model.b2,
            "l2": model.l2,
            "x_mean": _arr(model.x_mean),
            "x_scale": _arr(model.x_scale),
            "y_mean": model.y_mean,
            "y_scale": model.y_scale,
        }
    if isinstance(model, LinearModel):
        return {
            "model_kind": "ols",
            "intercept": model.intercept,
            "coefficients": _arr(model.coefficients),
            "feature_names": list(model.feature_names),
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def _opt(a):
    return None if a is None else np.asarray(a, dtype=float)


def model_from_dict(data: dict):
    kind = data["model_kind"]
    if kind == "rf":
        return ForestModel(tuple(Tree.from_dict(t) for t in data["trees"]), ForestParams(**data["params"]),
                           data["seed"], data["n_features"])
    if kind == "gbt":
        return BoostedModel(data["base_score"], tuple(Tree.from_dict(t) for t in data["trees"]),
                            BoostParams(**data["params"]), data["seed"], data["n_features"],
                            tuple(data.get("train_rmse", ())))
    if kind == "svr":
        sv = np.asarray(data["support_vectors"], dtype=float).reshape(-1, data["n_features"])
        return SvrModel(sv, np.asarray(data["dual_coefs"], dtype=float), data["bias"],
                        KernelSpec(**data["kernel"]), SvrParams(**data["params"]), data["seed"],
                        _opt(data["x_mean"]), _opt(data["x_scale"]), data.get("n_iter", 0),
                        data.get("objective", 0.0))
    if kind == "mlp":
        return MlpModel(np.asarray(data["W1"], dtype=float).reshape(data["dims"][1], data["dims"][0]),
                        np.asarray(data["b1"], dtype=float), np.asarray(data["w2"], dtype=float),
                        data["b2"], data["l2"], _opt(data["x_mean"]), _opt(data["x_scale"]),
                        data["y_mean"], data["y_scale"])
    if kind == "ols":
        return LinearModel(data["intercept"], np.asarray(data["coefficients"], dtype=float),
                           tuple(data.get("feature_names", ())))
    raise ValueError(f"unknown model_kind {kind!r}")


def dumps_model(model, **extra) -> str:
    data = model_to_dict(model)
    data.update(extra)
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model, path, **extra) -> Path:
    path = Path(path)
    path.write_text(dumps_model(model, **extra), encoding="utf-8")
    return path


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
