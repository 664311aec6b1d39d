"""One-hidden-layer ReLU regressor trained with minibatch Adam.

The network is ``net(z) = b2 + w2 . relu(W1 z + b1)``. A model may carry affine
input/target scalings, in which case ``f(x) = y_mean + y_scale * net((x - x_mean) / x_scale)``
and training happens in the standardised space. With the identity scaling the
model is the bare network.

Loss per batch is ``mean((net(z) - t)^2) + l2 * ||W1||^2`` in standardised
units; the L2 penalty acts on the hidden layer's weight matrix only (biases and
the output layer are not penalised).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, EmptyTrainSet, ShapeMismatch

PARAM_NAMES = ("W1", "b1", "w2", "b2")


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 32
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-2
    seed: int = 0
    # standardise inputs and targets with training-set mean / std
    standardize: bool = True


@dataclass(frozen=True)
class MlpModel:
    W1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    l2: float = 1e-2
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    y_scale: float = 1.0
    model_kind: str = field(default="mlp", init=False)

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "w2": self.w2, "b2": np.asarray(self.b2, dtype=float)}

    def with_params(self, p: dict) -> "MlpModel":
        return replace(self, W1=p["W1"], b1=p["b1"], w2=p["w2"], b2=float(p["b2"]))


def init_mlp(d: int, seed: int = 0, hidden: int = 32, l2: float = 1e-2) -> MlpModel:
    """Glorot-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / (d + hidden)), size=(hidden, d))
    w2 = rng.normal(0.0, np.sqrt(2.0 / (hidden + 1)), size=hidden)
    return MlpModel(W1, np.zeros(hidden), w2, 0.0, l2)


def _check(model: MlpModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {X.shape[1]}")
    return X


def _scaled(model: MlpModel, X, y=None):
    Z = X if model.x_mean is None else (X - model.x_mean) / model.x_scale
    if y is None:
        return Z
    return Z, (np.asarray(y, dtype=float) - model.y_mean) / model.y_scale


def _net(model: MlpModel, Z) -> np.ndarray:
    return np.maximum(Z @ model.W1.T + model.b1, 0.0) @ model.w2 + model.b2


def forward(model: MlpModel, X):
    single = np.ndim(X) == 1
    out = model.y_mean + model.y_scale * _net(model, _scaled(model, _check(model, X)))
    return float(out[0]) if single else out


predict_mlp = forward


def loss(model: MlpModel, X, y) -> float:
    """Batch MSE (standardised units) plus the hidden-layer L2 penalty."""
    Z, t = _scaled(model, _check(model, X), y)
    return float(np.mean((_net(model, Z) - t) ** 2) + model.l2 * np.sum(model.W1**2))


def compute_gradients(model: MlpModel, X, y) -> dict:
    """Exact gradients of :func:`loss` with respect to ``W1, b1, w2, b2``."""
    if np.size(X) == 0:
        raise EmptyBatch("empty batch")
    X, y = _scaled(model, _check(model, X), y)
    n = X.shape[0]
    pre = X @ model.W1.T + model.b1
    h = np.maximum(pre, 0.0)
    r = h @ model.w2 + model.b2 - y
    dout = 2.0 * r / n
    g_w2 = h.T @ dout
    g_b2 = dout.sum()
    dpre = np.outer(dout, model.w2) * (pre > 0)
    g_W1 = dpre.T @ X + 2.0 * model.l2 * model.W1
    g_b1 = dpre.sum(axis=0)
    return {"W1": g_W1, "b1": g_b1, "w2": g_w2, "b2": np.asarray(g_b2)}


@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, model: MlpModel, config: MlpConfig = MlpConfig()) -> "AdamState":
        p = model.params()
        return cls({k: np.zeros_like(v) for k, v in p.items()}, {k: np.zeros_like(v) for k, v in p.items()},
                   0, config.lr, config.beta1, config.beta2, config.eps)


def adam_step(state: AdamState, model: MlpModel, grads: dict):
    """One bias-corrected Adam update; returns ``(new_state, new_model)``."""
    params = model.params()
    for k in PARAM_NAMES:
        if np.shape(grads[k]) != np.shape(params[k]) or np.shape(state.m[k]) != np.shape(params[k]):
            raise ShapeMismatch(f"{k}: grad {np.shape(grads[k])}, param {np.shape(params[k])}")
    t = state.step + 1
    m, v, new = {}, {}, {}
    for k in PARAM_NAMES:
        g = np.asarray(grads[k], dtype=float)
        m[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        m_hat = m[k] / (1 - state.beta1**t)
        v_hat = v[k] / (1 - state.beta2**t)
        new[k] = params[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), model.with_params(new)


def fit_mlp(train, config: MlpConfig = MlpConfig(), history: list | None = None) -> MlpModel:
    """Minibatch Adam for ``config.epochs`` epochs.

    Seeds: initial weights come from ``init_mlp(d, config.seed)``; epoch ``e``
    shuffles with ``default_rng([config.seed, e + 1])``. The last short batch of
    an epoch is used. When ``history`` is given, the full-batch loss before
    training and after each epoch is appended.
    """
    if train.n == 0:
        raise EmptyTrainSet("empty training set")
    X, y = train.rows, train.targets
    model = init_mlp(train.d, config.seed, config.hidden, config.l2)
    if config.standardize:
        x_scale = X.std(axis=0)
        y_scale = float(y.std())
        model = replace(
            model,
            x_mean=X.mean(axis=0),
            x_scale=np.where(x_scale > 0, x_scale, 1.0),
            y_mean=float(y.mean()),
            y_scale=y_scale if y_scale > 0 else 1.0,
        )
    state = AdamState.zeros_like(model, config)
    if history is not None:
        history.append(loss(model, X, y))
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch + 1]).permutation(train.n)
        for start in range(0, train.n, config.batch_size):
            batch = order[start : start + config.batch_size]
            state, model = adam_step(state, model, compute_gradients(model, X[batch], y[batch]))
        if history is not None:
            history.append(loss(model, X, y))
    return model
