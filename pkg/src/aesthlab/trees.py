"""Regression trees, bagged random forests and gradient-boosted tree stacks.

Trees are stored as flat node arrays (node 0 is the root, ``left == -1`` marks
a leaf). Every node records its cover, the number of training rows routed
through it, which path-dependent TreeSHAP uses as branch probabilities.

Split search uses one criterion for both model families: with ``G`` the sum of
targets in a node and ``H`` its row count, a split scores
``T(G_L)^2/(H_L+l2) + T(G_R)^2/(H_R+l2) - T(G)^2/(H+l2)`` where ``T`` is
soft-thresholding by ``l1``. With ``l2 = l1 = 0`` this is exactly the reduction
in squared error (the forest's MSE criterion); with ``l2 > 0`` it is the
second-order boosting gain.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DimensionMismatch, EmptyTrainSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # int, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray  # int, -1 at leaves
    right: np.ndarray
    value: np.ndarray  # leaf output; mean routed target at internal nodes
    cover: np.ndarray  # float counts (bootstrap duplicates counted)
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    @property
    def left_cover(self) -> np.ndarray:
        return np.where(self.left >= 0, self.cover[self.left], 0.0)

    @property
    def right_cover(self) -> np.ndarray:
        return np.where(self.right >= 0, self.cover[self.right], 0.0)

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):  # children always follow their parent
            if self.left[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def expected_value(self) -> float:
        """Cover-weighted mean of leaf outputs."""
        leaves = self.left < 0
        return float(np.dot(self.cover[leaves], self.value[leaves]) / self.cover[0])

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            np.asarray(data["feature"], dtype=np.int64),
            np.asarray(data["threshold"], dtype=float),
            np.asarray(data["left"], dtype=np.int64),
            np.asarray(data["right"], dtype=np.int64),
            np.asarray(data["value"], dtype=float),
            np.asarray(data["cover"], dtype=float),
            int(data["n_features"]),
        )

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0, n_features: int = 1) -> "Tree":
        return cls(
            np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
            np.array([float(value)]), np.array([float(cover)]), n_features,
        )

    @classmethod
    def stump(cls, feature, threshold, left_value, right_value, left_cover=1.0, right_cover=1.0,
              n_features=1) -> "Tree":
        cover = float(left_cover + right_cover)
        mean = (left_value * left_cover + right_value * right_cover) / cover
        return cls(
            np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]),
            np.array([1, -1, -1]), np.array([2, -1, -1]),
            np.array([mean, left_value, right_value], dtype=float),
            np.array([cover, left_cover, right_cover], dtype=float), n_features,
        )


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    # None = all features, "sqrt" = ceil(sqrt(d)), int = that many
    max_features: int | str | None = None
    l2: float = 0.0
    l1: float = 0.0
    seed: int = 0


def n_candidate_features(max_features, d: int) -> int:
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(d)))
    return max(1, min(d, int(max_features)))


def _soft(g, l1):
    if l1 == 0.0:
        return g
    return np.sign(g) * np.maximum(np.abs(g) - l1, 0.0)


def _leaf_value(g: float, h: float, l2: float, l1: float) -> float:
    return float(_soft(g, l1) / (h + l2))


@njit(cache=True)
def _scan_feature(X, y, idx, f, g_tot, parent, l2, l1, min_leaf):
    """Best split on one feature: (gain, threshold), gain = -inf when none is valid."""
    n = idx.size
    xv = np.empty(n)
    for r in range(n):
        xv[r] = X[idx[r], f]
    order = np.argsort(xv, kind="mergesort")
    best_gain = -np.inf
    best_thr = 0.0
    gl = 0.0
    for k in range(1, n - min_leaf + 1):
        gl += y[idx[order[k - 1]]]
        if k < min_leaf:
            continue
        lo = xv[order[k - 1]]
        hi = xv[order[k]]
        if not lo < hi:
            continue
        gr = g_tot - gl
        if l1 > 0.0:
            tl = np.sign(gl) * max(abs(gl) - l1, 0.0)
            tr = np.sign(gr) * max(abs(gr) - l1, 0.0)
        else:
            tl = gl
            tr = gr
        gain = tl * tl / (k + l2) + tr * tr / (n - k + l2) - parent
        if gain > best_gain:
            best_gain = gain
            thr = 0.5 * (lo + hi)
            if not (lo <= thr and thr < hi):  # adjacent doubles: midpoint rounds up to hi
                thr = lo
            best_thr = thr
    return best_gain, best_thr


def _best_split(X, y, idx, features, l2, l1, min_leaf):
    """Best (gain, feature, threshold) over ``features`` for rows ``idx``, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    min_leaf = max(int(min_leaf), 1)
    if idx.size < 2 * min_leaf:
        return None
    g_tot = float(y[idx].sum())
    parent = float(_soft(g_tot, l1)) ** 2 / (idx.size + l2)
    best = None
    for f in features:
        gain, thr = _scan_feature(X, y, idx, int(f), g_tot, parent, l2, l1, min_leaf)
        if gain > -np.inf and (best is None or gain > best[0]):
            best = (float(gain), int(f), float(thr))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, params: TreeParams = TreeParams(), rng=None) -> Tree:
    """Greedy depth-first tree on raw arrays; ``rng`` drives feature subsampling."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n == 0:
        raise EmptyTrainSet("cannot fit a tree on zero rows")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    m = n_candidate_features(params.max_features, d)
    max_depth = params.max_depth if params.max_depth is not None else np.inf
    l2, l1 = float(params.l2), float(params.l1)

    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_leaf_value(y[idx].sum(), idx.size, l2, l1))
        cover.append(float(idx.size))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        if depth >= max_depth or idx.size < params.min_samples_split or ys.max() == ys.min():
            continue
        if m < d:
            # draw features in random order until m non-constant ones are found
            order = rng.permutation(d)
            cands = []
            for f in order:
                col = X[idx, f]
                if col.max() > col.min():
                    cands.append(int(f))
                    if len(cands) == m:
                        break
            features = sorted(cands)
        else:
            features = range(d)
        best = _best_split(X, y, idx, features, l2, l1, params.min_samples_leaf)
        if best is None or not best[0] > 0.0:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value), np.array(cover), d,
    )


def fit_tree(train, params: TreeParams = TreeParams(), targets_override=None) -> Tree:
    """Fit one regression tree to a :class:`LabeledDataset` (or residuals for it)."""
    y = train.targets if targets_override is None else np.asarray(targets_override, dtype=float)
    if train.n == 0:
        raise EmptyTrainSet("empty training set")
    if y.shape[0] != train.n:
        raise DimensionMismatch(f"{y.shape[0]} targets for {train.n} rows")
    return grow_tree(train.rows, y, params)


def _as_matrix(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features, got {X.shape[1]}")
    return X


def apply_tree(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf index reached by each row (``x <= threshold`` goes left)."""
    X = _as_matrix(X, tree.n_features)
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(tree.left[node] >= 0)
    while active.size:
        cur = node[active]
        go_left = X[active, tree.feature[cur]] <= tree.threshold[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = active[tree.left[node[active]] >= 0]
    return node


def predict_tree(tree: Tree, X) -> np.ndarray | float:
    """Tree output for one row (returns float) or a matrix of rows."""
    single = np.ndim(X) == 1
    out = tree.value[apply_tree(tree, X)]
    return float(out[0]) if single else out


# ---------------------------------------------------------------- forest


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 150
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    params: ForestParams
    seed: int
    n_features: int
    model_kind: str = field(default="rf", init=False)


def tree_seeds(seed: int, count: int) -> list:
    """Per-tree generators spawned from the root seed (order independent)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _fit_forest_tree(X, y, tparams, bootstrap, rng):
    n = X.shape[0]
    if bootstrap:
        sample = rng.integers(0, n, size=n)
        return grow_tree(X[sample], y[sample], tparams, rng)
    return grow_tree(X, y, tparams, rng)


def fit_random_forest(train, params: ForestParams = ForestParams(), seed: int = 0, n_jobs: int = 1) -> ForestModel:
    """Bagged trees, each grown on a size-n bootstrap sample."""
    if train.n == 0:
        raise EmptyTrainSet("empty training set")
    tparams = TreeParams(params.max_depth, params.min_samples_split, params.min_samples_leaf, params.max_features)
    X, y = train.rows, train.targets
    rngs = tree_seeds(seed, params.n_trees)
    if n_jobs == 1:
        trees = [_fit_forest_tree(X, y, tparams, params.bootstrap, r) for r in rngs]
    else:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=n_jobs)(
            delayed(_fit_forest_tree)(X, y, tparams, params.bootstrap, r) for r in rngs
        )
    return ForestModel(tuple(trees), params, seed, train.d)


def predict_forest(model: ForestModel, X):
    single = np.ndim(X) == 1
    Xm = _as_matrix(X, model.n_features)
    total = np.zeros(Xm.shape[0])
    for t in model.trees:
        total += t.value[apply_tree(t, Xm)]
    out = total / len(model.trees)
    return float(out[0]) if single else out


# ---------------------------------------------------------------- boosting


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 150
    max_depth: int = 3
    learning_rate: float = 0.1
    lambda_l2: float = 1.0
    alpha_l1: float = 0.0
    subsample: float = 1.0
    min_samples_split: int = 2
    min_samples_leaf: int = 1


@dataclass(frozen=True)
class BoostedModel:
    base_score: float
    trees: tuple
    params: BoostParams
    seed: int
    n_features: int
    train_rmse: tuple = ()  # after each round
    model_kind: str = field(default="gbt", init=False)


def fit_gbt(train, params: BoostParams = BoostParams(), seed: int = 0) -> BoostedModel:
    """Squared-error gradient boosting with L2/L1-regularised leaf weights.

    Leaves hold the unscaled weight ``T(G)/(H + lambda)`` of the residuals routed
    to them; the learning rate is applied once, at prediction time.
    """
    if train.n == 0:
        raise EmptyTrainSet("empty training set")
    X, y = train.rows, train.targets
    n = X.shape[0]
    base = float(y.mean())
    pred = np.full(n, base)
    tparams = TreeParams(params.max_depth, params.min_samples_split, params.min_samples_leaf, None,
                         params.lambda_l2, params.alpha_l1)
    rng = np.random.default_rng(seed)
    trees, history = [], []
    for r in range(params.rounds):
        resid = y - pred
        if params.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=max(1, int(round(params.subsample * n))), replace=False))
            tree = grow_tree(X[rows], resid[rows], tparams, rng)
        else:
            tree = grow_tree(X, resid, tparams, rng)
        pred = pred + params.learning_rate * tree.value[apply_tree(tree, X)]
        trees.append(tree)
        history.append(float(np.sqrt(np.mean((y - pred) ** 2))))
        log.debug("gbt round %d train rmse %.6g", r + 1, history[-1])
    return BoostedModel(base, tuple(trees), params, seed, train.d, tuple(history))


def predict_gbt(model: BoostedModel, X):
    single = np.ndim(X) == 1
    Xm = _as_matrix(X, model.n_features)
    total = np.zeros(Xm.shape[0])
    for t in model.trees:
        total += t.value[apply_tree(t, Xm)]
    out = model.base_score + model.params.learning_rate * total
    return float(out[0]) if single else out
