"""Shapley attributions: exact enumeration, KernelSHAP, path-dependent TreeSHAP.

Two coalition value functions are used, and each method names its flavour:

* interventional: ``v(S)`` is the background-weighted mean of ``f(z)`` where
  ``z`` copies the instance on ``S`` and a background point elsewhere.
  Used by :func:`exact_shapley`, :func:`kernel_shap` and the interaction matrix.
* path-dependent: ``v(S)`` descends a tree following the instance on features
  in ``S`` and averages both branches, weighted by training covers, elsewhere.
  Used by :func:`tree_shap` and its brute-force check
  :func:`brute_force_tree_shap`.

Coalitions are bitmasks (bit ``i`` set means feature ``i`` is known) and are
enumerated in increasing integer order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from numba import njit

from .errors import (
    DimensionMismatch,
    EmptyInput,
    IndexOutOfRange,
    KExceedsN,
    MissingCovers,
    SingularSystem,
    TooManyFeatures,
)
from .trees import BoostedModel, ForestModel, Tree

MAX_EXACT_FEATURES = 20
MAX_INTERACTION_FEATURES = 16
_CHUNK_ROWS = 1 << 18


@dataclass(frozen=True)
class PredictOracle:
    """A batch prediction function ``(m, d) -> (m,)`` plus its input width."""

    fn: Callable[[np.ndarray], np.ndarray]
    d: int

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(np.asarray(X, dtype=float))), dtype=float).reshape(-1)

    @classmethod
    def for_model(cls, model) -> "PredictOracle":
        from .models import predict

        return cls(lambda X: predict(model, X), model.n_features)


@dataclass(frozen=True)
class BackgroundSet:
    points: np.ndarray  # (k, d)
    weights: np.ndarray  # (k,), nonnegative, positive sum
    objective_trace: tuple = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1 or w.shape[0] != pts.shape[0]:
            raise ValueError("background needs k >= 1 points and one weight per point")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("background weights must be nonnegative with positive sum")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "BackgroundSet":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.ones(pts.shape[0]))

    @property
    def k(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Attribution:
    base_value: float
    phis: np.ndarray
    x: np.ndarray
    method: str = ""
    instance_id: int | str | None = None

    @property
    def total(self) -> float:
        return float(self.base_value + self.phis.sum())


# ---------------------------------------------------------------- k-means


def kmeans_summarize(X, k: int = 3, seed: int = 0, max_iter: int = 300) -> BackgroundSet:
    """Lloyd's algorithm with k-means++ seeding; weights are cluster sizes.

    An emptied cluster is re-seeded at the point farthest from its centre,
    which keeps the objective from increasing.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise KExceedsN(f"k={k} for n={n}")
    rng = np.random.default_rng(seed)
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    d2 = ((X - centres[0]) ** 2).sum(1)
    for c in range(1, k):
        total = d2.sum()
        pick = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres[c] = X[pick]
        d2 = np.minimum(d2, ((X - centres[c]) ** 2).sum(1))

    trace = []
    labels = None
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centres[None, :, :]) ** 2).sum(2)
        new_labels = dist.argmin(1)
        trace.append(float(dist[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centres[c] = X[members].mean(0)
            else:
                far = int(dist[np.arange(n), labels].argmax())
                centres[c] = X[far]
                labels[far] = c
    weights = np.bincount(labels, minlength=k).astype(float)
    keep = weights > 0
    return BackgroundSet(centres[keep], weights[keep], tuple(trace))


# ---------------------------------------------------------------- interventional values


def _mask_bits(masks, d) -> np.ndarray:
    return ((np.asarray(masks, dtype=np.int64)[:, None] >> np.arange(d)) & 1).astype(bool)


def coalition_values(oracle: PredictOracle, x, background: BackgroundSet, masks) -> np.ndarray:
    """Interventional ``v(S)`` for every bitmask in ``masks``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (oracle.d,):
        raise DimensionMismatch(f"instance has shape {x.shape}, oracle expects ({oracle.d},)")
    masks = np.asarray(masks, dtype=np.int64)
    k = background.k
    w = background.weights / background.weights.sum()
    out = np.empty(masks.size)
    step = max(1, _CHUNK_ROWS // k)
    for start in range(0, masks.size, step):
        bits = _mask_bits(masks[start : start + step], oracle.d)
        Z = np.where(bits[:, None, :], x[None, None, :], background.points[None, :, :])
        f = oracle(Z.reshape(-1, oracle.d)).reshape(bits.shape[0], k)
        out[start : start + step] = f @ w
    return out


def value_function(oracle: PredictOracle, x, S, background: BackgroundSet) -> float:
    """Interventional ``v(S)`` for one coalition given as an iterable of feature indices."""
    mask = 0
    for i in S:
        if not 0 <= i < oracle.d:
            raise IndexOutOfRange(f"feature {i} for d={oracle.d}")
        mask |= 1 << int(i)
    return float(coalition_values(oracle, x, background, [mask])[0])


def shapley_weights(d: int) -> np.ndarray:
    """``w[s] = s! (d - s - 1)! / d!`` for coalition sizes ``s = 0..d-1``."""
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])


def _popcount(masks) -> np.ndarray:
    return np.bitwise_count(np.asarray(masks, dtype=np.int64)).astype(np.int64)


def shapley_from_values(v: np.ndarray, d: int) -> np.ndarray:
    """Shapley values from a full table ``v[mask]`` over all ``2**d`` coalitions."""
    masks = np.arange(1 << d, dtype=np.int64)
    w = shapley_weights(d)
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        S = masks[(masks & bit) == 0]
        phi[i] = np.dot(w[_popcount(S)], v[S | bit] - v[S])
    return phi


def exact_shapley(oracle: PredictOracle, x, background: BackgroundSet) -> Attribution:
    """Brute-force Shapley values over all ``2**d`` coalitions (``d <= 20``)."""
    d = oracle.d
    if d > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"d={d} > {MAX_EXACT_FEATURES}")
    v = coalition_values(oracle, x, background, np.arange(1 << d))
    return Attribution(float(v[0]), shapley_from_values(v, d), np.asarray(x, dtype=float), "exact")


# ---------------------------------------------------------------- KernelSHAP


@dataclass(frozen=True)
class Sample:
    """Draw ``m`` coalitions: size ``s`` with probability proportional to the
    total Shapley-kernel weight of that size, then a uniform subset of size ``s``."""

    m: int
    seed: int = 0


ENUMERATE_ALL = "enumerate_all"


def kernel_weight(d: int, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    comb = np.array([math.comb(d, int(t)) for t in np.atleast_1d(s)], dtype=float).reshape(s.shape)
    return (d - 1) / (comb * s * (d - s))


def _sample_coalitions(d: int, sample: Sample):
    rng = np.random.default_rng(sample.seed)
    sizes = np.arange(1, d)
    p = (d - 1) / (sizes * (d - sizes))
    p = p / p.sum()
    drawn = rng.choice(sizes, size=sample.m, p=p)
    masks = np.empty(sample.m, dtype=np.int64)
    for t, s in enumerate(drawn):
        members = rng.choice(d, size=int(s), replace=False)
        masks[t] = int(np.sum(np.int64(1) << members.astype(np.int64)))
    uniq, counts = np.unique(masks, return_counts=True)
    return uniq, counts.astype(float)


def kernel_shap(oracle: PredictOracle, x, background: BackgroundSet, sampling=ENUMERATE_ALL) -> Attribution:
    """Constrained weighted least squares over coalition indicators.

    ``base_value = v(empty)`` and ``sum(phi) = f(x) - v(empty)`` hold exactly: the
    last coefficient is eliminated through the sum constraint before solving.
    """
    x = np.asarray(x, dtype=float)
    d = oracle.d
    full = (1 << d) - 1
    if sampling == ENUMERATE_ALL:
        if d > MAX_EXACT_FEATURES:
            raise TooManyFeatures(f"enumerating 2**{d} coalitions")
        masks = np.arange(1, full, dtype=np.int64)
        weights = kernel_weight(d, _popcount(masks)) if masks.size else np.empty(0)
    elif isinstance(sampling, Sample):
        if d < 2:
            raise ValueError("sampling needs d >= 2")
        masks, weights = _sample_coalitions(d, sampling)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")

    ends = coalition_values(oracle, x, background, [0, full])
    base, fx = float(ends[0]), float(ends[1])
    delta = fx - base
    if d == 1:
        return Attribution(base, np.array([delta]), x, "kernel")

    v = coalition_values(oracle, x, background, masks)
    Z = _mask_bits(masks, d).astype(float)
    A = Z[:, :-1] - Z[:, -1:]
    b = v - base - Z[:, -1] * delta
    sw = np.sqrt(weights)
    Aw, bw = A * sw[:, None], b * sw
    rank = np.linalg.matrix_rank(Aw)
    if rank < d - 1:
        raise SingularSystem(
            f"coalition design has rank {rank} < {d - 1}; coalitions used: {masks.tolist()}",
            masks.tolist(),
        )
    head, *_ = np.linalg.lstsq(Aw, bw, rcond=None)
    phis = np.append(head, delta - head.sum())
    return Attribution(base, phis, x, "kernel")


# ---------------------------------------------------------------- path-dependent TreeSHAP


@njit(cache=True)
def _extend(feat, zero, one, pw, depth, pz, po, pi):
    feat[depth] = pi
    zero[depth] = pz
    one[depth] = po
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += po * pw[i] * (i + 1) / (depth + 1)
        pw[i] = pz * pw[i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zero, one, pw, depth, k):
    po = one[k]
    pz = zero[k]
    carry = pw[depth]
    for i in range(depth - 1, -1, -1):
        if po != 0.0:
            tmp = pw[i]
            pw[i] = carry * (depth + 1) / ((i + 1) * po)
            carry = tmp - pw[i] * pz * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (pz * (depth - i))
    for i in range(k, depth):
        feat[i] = feat[i + 1]
        zero[i] = zero[i + 1]
        one[i] = one[i + 1]


@njit(cache=True)
def _unwound_sum(zero, one, pw, depth, k):
    po = one[k]
    pz = zero[k]
    carry = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if po != 0.0:
            tmp = carry * (depth + 1) / ((i + 1) * po)
            total += tmp
            carry = pw[i] - tmp * pz * (depth - i) / (depth + 1)
        else:
            total += pw[i] / (pz * (depth - i) / (depth + 1))
    return total


@njit(
    numba.void(
        numba.int64[:], numba.int64[:], numba.int64[:], numba.float64[:], numba.float64[:],
        numba.float64[:], numba.float64[:], numba.float64[:],
        numba.int64, numba.int64,
        numba.int64[:], numba.float64[:], numba.float64[:], numba.float64[:],
        numba.float64, numba.float64, numba.int64,
    ),
    cache=True,
)
def _recurse(left, right, feature, threshold, value, cover, x, phi,
             node, depth, p_feat, p_zero, p_one, p_pw, pz, po, pi):
    # each recursion level owns a fresh slice of the path buffers
    feat = p_feat[depth + 1 :]
    zero = p_zero[depth + 1 :]
    one = p_one[depth + 1 :]
    pw = p_pw[depth + 1 :]
    for i in range(depth + 1):
        feat[i] = p_feat[i]
        zero[i] = p_zero[i]
        one[i] = p_one[i]
        pw[i] = p_pw[i]
    _extend(feat, zero, one, pw, depth, pz, po, pi)

    if left[node] < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(zero, one, pw, depth, i)
            phi[feat[i]] += w * (one[i] - zero[i]) * value[node]
        return

    f = feature[node]
    if x[f] <= threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    iz = 1.0
    io = 1.0
    k = 0
    while k <= depth:
        if feat[k] == f:
            break
        k += 1
    if k != depth + 1:
        iz = zero[k]
        io = one[k]
        _unwind(feat, zero, one, pw, depth, k)
        depth -= 1
    _recurse(left, right, feature, threshold, value, cover, x, phi, hot, depth + 1,
             feat, zero, one, pw, iz * cover[hot] / cover[node], io, f)
    _recurse(left, right, feature, threshold, value, cover, x, phi, cold, depth + 1,
             feat, zero, one, pw, iz * cover[cold] / cover[node], 0.0, f)


def _check_covers(tree: Tree):
    if tree.cover is None or tree.cover.shape != tree.feature.shape or np.any(~(tree.cover > 0)):
        raise MissingCovers("every node needs a positive training cover")


def tree_shap_single(tree: Tree, x) -> Attribution:
    """Path-dependent TreeSHAP for one tree (polynomial time)."""
    _check_covers(tree)
    x = np.array(x, dtype=float)  # writable copy for the jitted kernel
    if x.shape != (tree.n_features,):
        raise DimensionMismatch(f"instance has shape {x.shape}, tree expects ({tree.n_features},)")
    phi = np.zeros(tree.n_features)
    maxd = tree.max_depth() + 2
    size = maxd * (maxd + 1) // 2
    feat = np.full(size, -1, dtype=np.int64)
    zero, one, pw = np.zeros(size), np.zeros(size), np.zeros(size)
    _recurse(tree.left.astype(np.int64), tree.right.astype(np.int64), tree.feature.astype(np.int64),
             tree.threshold.astype(float), tree.value.astype(float), tree.cover.astype(float), x, phi,
             0, 0, feat, zero, one, pw, 1.0, 1.0, -1)
    return Attribution(tree.expected_value(), phi, x, "tree")


def tree_shap(model, x) -> Attribution:
    """TreeSHAP for a tree, a forest (mean over trees) or a boosted stack
    (``base_score + lr * sum`` over trees)."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, Tree):
        return tree_shap_single(model, x)
    if isinstance(model, ForestModel):
        parts = [tree_shap_single(t, x) for t in model.trees]
        base = sum(p.base_value for p in parts) / len(parts)
        phis = np.sum([p.phis for p in parts], axis=0) / len(parts)
        return Attribution(float(base), phis, x, "tree")
    if isinstance(model, BoostedModel):
        lr = model.params.learning_rate
        base, phis = 0.0, np.zeros(model.n_features)
        for t in model.trees:
            a = tree_shap_single(t, x)
            base += a.base_value
            phis += a.phis
        return Attribution(model.base_score + lr * base, lr * phis, x, "tree")
    raise MissingCovers(f"{type(model).__name__} is not a tree model with node covers")


def path_dependent_values(tree: Tree, x, masks) -> np.ndarray:
    """Path-dependent ``v(S)`` for every bitmask by direct tree traversal."""
    _check_covers(tree)
    masks = np.asarray(masks, dtype=np.int64)

    def walk(node):
        if tree.left[node] < 0:
            return np.full(masks.size, tree.value[node])
        f = tree.feature[node]
        l, r = tree.left[node], tree.right[node]
        vl, vr = walk(l), walk(r)
        known = ((masks >> f) & 1).astype(bool)
        hot = vl if x[f] <= tree.threshold[node] else vr
        return np.where(known, hot, (tree.cover[l] * vl + tree.cover[r] * vr) / tree.cover[node])

    return walk(0)


def brute_force_tree_shap(model, x) -> Attribution:
    """Shapley values of the path-dependent value function by full enumeration."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, Tree):
        trees, scale, offset, mean = [model], 1.0, 0.0, False
    elif isinstance(model, ForestModel):
        trees, scale, offset, mean = list(model.trees), 1.0 / len(model.trees), 0.0, True
    elif isinstance(model, BoostedModel):
        trees, scale, offset, mean = list(model.trees), model.params.learning_rate, model.base_score, False
    else:
        raise MissingCovers(f"{type(model).__name__} is not a tree model")
    d = trees[0].n_features
    if d > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"d={d}")
    masks = np.arange(1 << d, dtype=np.int64)
    v = np.zeros(masks.size)
    for t in trees:
        v += path_dependent_values(t, x, masks)
    v = offset + scale * v
    return Attribution(float(v[0]), shapley_from_values(v, d), x, "tree-brute")


# ---------------------------------------------------------------- interactions


@dataclass(frozen=True)
class InteractionMatrix:
    values: np.ndarray  # (d, d), symmetric
    phis: np.ndarray
    base_value: float


def _pair_weights(d: int) -> np.ndarray:
    # |S|! (d - |S| - 2)! / (2 (d - 1)!)
    return np.array([math.factorial(s) * math.factorial(d - s - 2) / (2 * math.factorial(d - 1))
                     for s in range(d - 1)])


def _pair_index(v, d, i, j) -> float:
    masks = np.arange(1 << d, dtype=np.int64)
    bi, bj = 1 << i, 1 << j
    S = masks[(masks & (bi | bj)) == 0]
    grad = v[S | bi | bj] - v[S | bi] - v[S | bj] + v[S]
    return float(np.dot(_pair_weights(d)[_popcount(S)], grad))


def interaction_index(oracle: PredictOracle, x, background: BackgroundSet, i: int, j: int) -> float:
    """Off-diagonal SHAP interaction value ``Phi_ij`` (each of ``Phi_ij``, ``Phi_ji``
    carries half of the pairwise Shapley interaction)."""
    d = oracle.d
    if d > MAX_INTERACTION_FEATURES:
        raise TooManyFeatures(f"d={d} > {MAX_INTERACTION_FEATURES}")
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise IndexOutOfRange(f"need distinct feature indices below {d}, got ({i}, {j})")
    v = coalition_values(oracle, x, background, np.arange(1 << d))
    return _pair_index(v, d, i, j)


def full_interaction_matrix(oracle: PredictOracle, x, background: BackgroundSet) -> InteractionMatrix:
    """All pairwise interaction values; the diagonal makes each row sum to ``phi_i``."""
    d = oracle.d
    if d > MAX_INTERACTION_FEATURES:
        raise TooManyFeatures(f"d={d} > {MAX_INTERACTION_FEATURES}")
    v = coalition_values(oracle, x, background, np.arange(1 << d))
    phis = shapley_from_values(v, d)
    M = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            M[i, j] = M[j, i] = _pair_index(v, d, i, j)
    for i in range(d):
        M[i, i] = phis[i] - (M[i].sum() - M[i, i])
    return InteractionMatrix(M, phis, float(v[0]))


# ---------------------------------------------------------------- report series


def summary_ranking(attributions, feature_names=None) -> list:
    """(feature, mean |phi|) sorted descending; ties keep feature order."""
    if not attributions:
        raise EmptyInput("no attributions")
    P = np.array([np.asarray(a.phis if isinstance(a, Attribution) else a, dtype=float) for a in attributions])
    d = P.shape[1]
    names = list(feature_names) if feature_names is not None else [f"f{j + 1}" for j in range(d)]
    if len(names) != d:
        raise DimensionMismatch(f"{len(names)} names for {d} features")
    score = np.abs(P).mean(0)
    order = sorted(range(d), key=lambda j: (-score[j], j))
    return [(names[j], float(score[j])) for j in order]


@dataclass(frozen=True)
class DependenceSeries:
    feature: int
    color_feature: int
    points: list = field(default_factory=list)  # (x_i, phi_i, x_j)


def dependence_series(attributions, X_test, i: int, j: int) -> DependenceSeries:
    X = np.atleast_2d(np.asarray(X_test, dtype=float))
    if len(attributions) != X.shape[0]:
        raise DimensionMismatch(f"{len(attributions)} attributions for {X.shape[0]} rows")
    d = X.shape[1]
    if not (0 <= i < d and 0 <= j < d):
        raise IndexOutOfRange(f"({i}, {j}) for d={d}")
    pts = [(float(X[r, i]), float(a.phis[i]), float(X[r, j])) for r, a in enumerate(attributions)]
    return DependenceSeries(i, j, pts)


# ---------------------------------------------------------------- export


def write_attributions_csv(attributions, feature_names, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "base_value", *[f"phi_{n}" for n in feature_names]])
        for r, a in enumerate(attributions):
            iid = a.instance_id if a.instance_id is not None else r
            w.writerow([iid, repr(float(a.base_value)), *[repr(float(p)) for p in a.phis]])


def read_attributions_csv(path):
    """Returns ``(feature_names, attributions)``; ``x`` is left empty."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = [h[len("phi_"):] for h in header[2:]]
        out = []
        for rec in reader:
            out.append(Attribution(float(rec[1]), np.array([float(c) for c in rec[2:]]), np.empty(0),
                                   "", int(rec[0]) if rec[0].lstrip("-").isdigit() else rec[0]))
    return names, out


def write_matrix_csv(matrix, feature_names, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", *feature_names])
        for name, row in zip(feature_names, np.asarray(matrix)):
            w.writerow([name, *[repr(float(v)) for v in row]])


# ---------------------------------------------------------------- convenience


def explain(model, X, method: str, background: BackgroundSet | None = None, sampling=ENUMERATE_ALL) -> list:
    """Attributions for every row of ``X`` with ``method`` in {exact, kernel, tree}."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method == "tree":
        return [_with_id(tree_shap(model, x), r) for r, x in enumerate(X)]
    if background is None:
        raise ValueError(f"method {method!r} needs a background set")
    oracle = PredictOracle.for_model(model)
    if method == "exact":
        return [_with_id(exact_shapley(oracle, x, background), r) for r, x in enumerate(X)]
    if method == "kernel":
        return [_with_id(kernel_shap(oracle, x, background, sampling), r) for r, x in enumerate(X)]
    raise ValueError(f"unknown explain method {method!r}")


def _with_id(a: Attribution, r: int) -> Attribution:
    return Attribution(a.base_value, a.phis, a.x, a.method, r)
