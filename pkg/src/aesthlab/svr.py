"""Epsilon-insensitive support vector regression solved in the dual.

The dual is written over 2n variables ``beta = (alpha, alpha*)`` with signs
``s = (+1, ..., -1, ...)``::

    min  1/2 beta' Q beta + p' beta
    s.t. s' beta = 0,  0 <= beta <= C,
    Q_tu = s_t s_u K(x_t, x_u),  p = (eps - y, eps + y)

and optimised by sequential pairwise (SMO) updates. The stopping rule is the
maximal KKT violation ``max_{I_up} -s G - min_{I_low} -s G < tol``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTrainSet,
    NonConvergence,
    NotLinearKernel,
    ZeroVariance,
)

log = logging.getLogger(__name__)

GRAM_CACHE_LIMIT = 8192
TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """``kind`` is ``"rbf"`` or ``"linear"``; rbf ``gamma`` is a positive float or ``"scale"``."""

    kind: str = "rbf"
    gamma: float | str = "scale"

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and self.gamma != "scale" and not float(self.gamma) > 0:
            raise ValueError("rbf gamma must be > 0")

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma}


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise DimensionMismatch(f"{x.shape} vs {x2.shape}")
    if spec.kind == "linear":
        return float(np.dot(x, x2))
    if spec.gamma == "scale":
        raise ValueError("resolve 'scale' gamma before evaluating the kernel")
    diff = x - x2
    return float(np.exp(-float(spec.gamma) * np.dot(diff, diff)))


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"{A.shape[1]} vs {B.shape[1]} features")
    if spec.kind == "linear":
        return A @ B.T
    sq = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-float(spec.gamma) * sq)


def resolve_gamma(spec: KernelSpec, X) -> KernelSpec:
    """Replace ``gamma="scale"`` by ``1 / (d * Var(X))`` over all matrix entries."""
    if spec.kind != "rbf" or spec.gamma != "scale":
        return spec
    X = np.asarray(X, dtype=float)
    var = X.var()
    if X.size == 0 or np.ptp(X) == 0 or not var > 0:
        raise ZeroVariance("all feature entries are identical")
    return KernelSpec("rbf", 1.0 / (X.shape[1] * var))


@dataclass(frozen=True)
class SvrParams:
    C: float = 1.0
    epsilon: float = 0.01
    tol: float = 1e-3
    max_iter: int | None = None
    standardize: bool = False
    # "max_violating": first-order pair; "second_order": i first-order, j by second-order gain
    working_set: str = "max_violating"


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # stored in the (possibly standardised) fitting space
    dual_coefs: np.ndarray  # alpha - alpha*
    bias: float
    kernel: KernelSpec
    params: SvrParams
    seed: int = 0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    n_iter: int = 0
    objective: float = 0.0
    model_kind: str = field(default="svr", init=False)

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1] if self.x_mean is None else self.x_mean.shape[0]

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.x_mean is None:
            return X
        return (X - self.x_mean) / self.x_scale


def _select_pair(G, beta, s, C, Kdiag, Krow_fn, working_set):
    up = ((s > 0) & (beta < C)) | ((s < 0) & (beta > 0))
    low = ((s > 0) & (beta > 0)) | ((s < 0) & (beta < C))
    msG = -s * G
    if not up.any() or not low.any():
        return -1, -1, 0.0
    cand = np.where(up, msG, -np.inf)
    i = int(np.argmax(cand))
    m_up = cand[i]
    low_vals = np.where(low, msG, np.inf)
    gap = m_up - low_vals.min()
    if working_set == "max_violating":
        return i, int(np.argmin(low_vals)), gap
    # second order: among I_low with -sG < m_up, maximise b^2 / a
    n = Kdiag.size
    Ki = Krow_fn(i % n)
    Ki2 = np.concatenate([Ki, Ki])
    Kd2 = np.concatenate([Kdiag, Kdiag])
    b = m_up - msG
    ok = low & (b > 0)
    if not ok.any():
        return i, int(np.argmin(low_vals)), gap
    # Q_ii + Q_tt - 2 s_i s_t Q_it reduces to K_ii + K_tt - 2 K_it in kernel terms
    a = Kdiag[i % n] + Kd2 - 2.0 * Ki2
    a = np.where(a > 0, a, TAU)
    score = np.where(ok, -(b * b) / a, np.inf)
    return i, int(np.argmin(score)), gap


def fit_svr(train, kernel: KernelSpec = KernelSpec(), params: SvrParams = SvrParams(), seed: int = 0) -> SvrModel:
    """SMO for epsilon-SVR; deterministic (ties go to the lowest index).

    ``seed`` is recorded for provenance only; the solver draws no random numbers.
    """
    X = np.asarray(train.rows, dtype=float)
    y = np.asarray(train.targets, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise EmptyTrainSet("empty training set")
    x_mean = x_scale = None
    if params.standardize:
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
        X = (X - x_mean) / x_scale
    kernel = resolve_gamma(kernel, X)
    C, eps = float(params.C), float(params.epsilon)

    if n <= GRAM_CACHE_LIMIT:
        K = kernel_matrix(kernel, X, X)
        Kdiag = np.diag(K).copy()

        def krow(t):
            return K[t]
    else:
        Kdiag = np.ones(n) if kernel.kind == "rbf" else (X**2).sum(1)

        def krow(t):
            return kernel_matrix(kernel, X[t : t + 1], X)[0]

    s = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([eps - y, eps + y])
    beta = np.zeros(2 * n)
    G = p.copy()
    it = 0
    while True:
        i, j, gap = _select_pair(G, beta, s, C, Kdiag, krow, params.working_set)
        if i < 0 or gap < params.tol:
            break
        if params.max_iter is not None and it >= params.max_iter:
            raise NonConvergence(f"KKT gap {gap:.3g} after {it} iterations")
        it += 1
        ni, nj = i % n, j % n
        Ki, Kj = krow(ni), krow(nj)
        Qij = s[i] * s[j] * Ki[nj]
        old_i, old_j = beta[i], beta[j]
        if s[i] != s[j]:
            quad = Kdiag[ni] + Kdiag[nj] + 2.0 * Qij
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            elif beta[i] < 0:
                beta[i] = 0.0
                beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            elif beta[j] > C:
                beta[j] = C
                beta[i] = C + diff
        else:
            quad = Kdiag[ni] + Kdiag[nj] - 2.0 * Qij
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
            elif beta[j] < 0:
                beta[j] = 0.0
                beta[i] = total
            if total > C:
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            elif beta[i] < 0:
                beta[i] = 0.0
                beta[j] = total
        di, dj = beta[i] - old_i, beta[j] - old_j
        # G += Q[:, i] di + Q[:, j] dj with Q[:, t] = s * s_t * [K_t; K_t]
        col = s[i] * di * Ki + s[j] * dj * Kj
        G += s * np.concatenate([col, col])

    rho = _rho(G, beta, s, C)
    coef = beta[:n] - beta[n:]
    keep = coef != 0.0
    objective = 0.5 * float(np.dot(beta, G + p))
    log.debug("svr: %d iterations, %d support vectors, objective %.6g", it, keep.sum(), objective)
    return SvrModel(X[keep].copy(), coef[keep].copy(), -rho, kernel, params, seed,
                    x_mean, x_scale, it, objective)


def _rho(G, beta, s, C):
    yG = s * G
    at_upper = beta >= C
    at_lower = beta <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yG[free].mean())
    ub_mask = (at_upper & (s < 0)) | (at_lower & (s > 0))
    lb_mask = (at_upper & (s > 0)) | (at_lower & (s < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def predict_svr(model: SvrModel, X):
    single = np.ndim(X) == 1
    Xm = np.atleast_2d(np.asarray(X, dtype=float))
    if Xm.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {Xm.shape[1]}")
    Z = model.transform(Xm)
    if model.dual_coefs.size:
        out = kernel_matrix(model.kernel, Z, model.support_vectors) @ model.dual_coefs + model.bias
    else:
        out = np.full(Z.shape[0], model.bias)
    return float(out[0]) if single else out


def linear_weights(model: SvrModel):
    """Primal ``(w, b)`` of a linear-kernel model, in original feature units."""
    if model.kernel.kind != "linear":
        raise NotLinearKernel(f"kernel is {model.kernel.kind}")
    w = model.dual_coefs @ model.support_vectors if model.dual_coefs.size else np.zeros(model.n_features)
    b = model.bias
    if model.x_mean is not None:
        w = w / model.x_scale
        b = b - float(np.dot(w, model.x_mean))
    return np.asarray(w, dtype=float), float(b)
