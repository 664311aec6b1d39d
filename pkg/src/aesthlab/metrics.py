"""Regression metrics, Spearman correlation and the ordinary least-squares baseline."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, stats

from .errors import (
    ConstantInput,
    DimensionMismatch,
    IndexOutOfRange,
    LengthMismatch,
    RankDeficient,
    ZeroVarianceTarget,
)


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    mae: float
    mse: float
    rmse: float
    spearman_rho: float
    spearman_p: float | None = None
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=float).reshape(-1)
    b = np.asarray(y_pred, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.size} vs {b.size}")
    return a, b


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], v.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def spearman(y_true, y_pred):
    """``(rho, p)``: Pearson correlation of average ranks, p from the t approximation.

    ``p`` is None when ``|rho| == 1`` or ``n <= 2``.
    """
    a, b = _pair(y_true, y_pred)
    if a.size < 2:
        raise LengthMismatch("spearman needs at least 2 points")
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        raise ConstantInput("spearman is undefined for constant input")
    rho = float(np.clip((ra @ rb) / den, -1.0, 1.0))
    n = a.size
    p = None
    if n > 2 and abs(rho) < 1.0:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return rho, p


def compute_metrics(y_true, y_pred) -> MetricsReport:
    a, b = _pair(y_true, y_pred)
    if a.size == 0:
        raise LengthMismatch("empty inputs")
    resid = a - b
    sse = float(resid @ resid)
    centred = a - a.mean()
    sst = float(centred @ centred)
    if sst == 0.0:
        raise ZeroVarianceTarget("R^2 is undefined when y_true is constant")
    mse = sse / a.size
    try:
        rho, p = spearman(a, b) if a.size >= 2 else (float("nan"), None)
    except ConstantInput:
        rho, p = float("nan"), None
    return MetricsReport(
        r2=1.0 - sse / sst,
        mae=float(np.mean(np.abs(resid))),
        mse=mse,
        rmse=math.sqrt(mse),
        spearman_rho=rho,
        spearman_p=p,
        n=int(a.size),
    )


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    feature_names: tuple = ()
    model_kind: str = field(default="ols", init=False)

    @property
    def n_features(self) -> int:
        return self.coefficients.size

    def equation(self, digits: int = 4) -> str:
        names = self.feature_names or tuple(f"x{j + 1}" for j in range(self.n_features))
        terms = [f"{self.intercept:.{digits}f}"]
        for w, name in zip(self.coefficients, names):
            terms.append(f"{'-' if w < 0 else '+'} {abs(w):.{digits}f}*{name}")
        return "y = " + " ".join(terms)


def fit_ols(train) -> LinearModel:
    """Least squares with intercept via Householder QR."""
    X = np.asarray(train.rows, dtype=float)
    y = np.asarray(train.targets, dtype=float)
    n, d = X.shape
    if n <= d:
        raise RankDeficient(f"need n > d, got n={n}, d={d}")
    A = np.column_stack([np.ones(n), X])
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= max(n, d + 1) * np.finfo(float).eps * diag.max():
        raise RankDeficient("design matrix (with intercept column) is rank deficient")
    beta = linalg.solve_triangular(R, Q.T @ y)
    return LinearModel(float(beta[0]), beta[1:].copy(), tuple(getattr(train, "feature_names", ())))


def predict_linear(model: LinearModel, X):
    single = np.ndim(X) == 1
    Xm = np.atleast_2d(np.asarray(X, dtype=float))
    if Xm.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {Xm.shape[1]}")
    out = Xm @ model.coefficients + model.intercept
    return float(out[0]) if single else out


@dataclass(frozen=True)
class CorrelationReport:
    feature_names: tuple
    rho: tuple  # NaN where the attribute column is constant
    p: tuple
    constant: tuple = ()  # names of constant columns

    def ranked(self):
        """(name, rho) sorted by rho descending; constant columns last."""
        pairs = [(n, r) for n, r in zip(self.feature_names, self.rho)]
        return sorted(pairs, key=lambda t: (math.isnan(t[1]), -t[1] if not math.isnan(t[1]) else 0.0))


def attribute_correlations(data) -> CorrelationReport:
    if data.n < 2:
        raise LengthMismatch("need at least 2 rows")
    rhos, ps, constant = [], [], []
    for j, name in enumerate(data.feature_names):
        try:
            r, p = spearman(data.rows[:, j], data.targets)
        except ConstantInput:
            r, p = float("nan"), None
            constant.append(name)
        rhos.append(r)
        ps.append(p)
    return CorrelationReport(data.feature_names, tuple(rhos), tuple(ps), tuple(constant))


def scatter_series(data, i: int) -> list:
    if not 0 <= i < data.d:
        raise IndexOutOfRange(f"feature index {i} for d={data.d}")
    return list(zip(data.rows[:, i].tolist(), data.targets.tolist()))


def write_correlations_csv(report: CorrelationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "rho", "p"])
        for name, r, p in zip(report.feature_names, report.rho, report.p):
            w.writerow([name, repr(r), "" if p is None else repr(p)])
