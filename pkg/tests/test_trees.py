import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aesthlab.errors import DimensionMismatch, EmptyTrainSet
from aesthlab.models import dumps_model, load_model, save_model
from aesthlab.tabular import LinearGenerator, synth_dataset
from aesthlab.trees import (
    BoostedModel,
    BoostParams,
    ForestModel,
    ForestParams,
    Tree,
    TreeParams,
    apply_tree,
    fit_gbt,
    fit_random_forest,
    fit_tree,
    n_candidate_features,
    predict_forest,
    predict_gbt,
    predict_tree,
)

from conftest import make_dataset


def test_depth_one_split_on_two_points():
    t = fit_tree(make_dataset([[0.0], [1.0]], [0.0, 1.0]), TreeParams(max_depth=1))
    assert t.feature[0] == 0
    assert t.threshold[0] == 0.5
    assert t.value[t.left[0]] == 0.0
    assert t.value[t.right[0]] == 1.0


def test_constant_targets_give_single_leaf():
    t = fit_tree(make_dataset(np.random.default_rng(0).random((20, 3)), np.full(20, 2.5)))
    assert t.n_nodes == 1
    assert t.value[0] == 2.5


def test_single_row_cannot_split():
    t = fit_tree(make_dataset([[0.3, 0.1]], [4.0]), TreeParams(min_samples_split=2))
    assert t.n_nodes == 1


def test_empty_train_raises():
    empty = make_dataset(np.zeros((0, 2)), np.zeros(0))
    for fit in (fit_tree, fit_random_forest, fit_gbt):
        with pytest.raises(EmptyTrainSet):
            fit(empty)


def test_ties_prefer_lowest_feature():
    # both columns separate the targets equally well
    X = [[0.0, 0.0], [1.0, 1.0]]
    t = fit_tree(make_dataset(X, [0.0, 1.0]), TreeParams(max_depth=1))
    assert t.feature[0] == 0


def test_targets_override():
    data = make_dataset([[0.0], [1.0]], [5.0, 5.0])
    t = fit_tree(data, TreeParams(max_depth=1), targets_override=np.array([0.0, 1.0]))
    assert t.n_nodes == 3


def test_leaf_passthrough_and_boundary():
    assert predict_tree(Tree.leaf(0.7), np.array([123.0])) == 0.7
    stump = Tree.stump(0, 0.5, 0.0, 1.0)
    assert predict_tree(stump, np.array([0.5])) == 0.0
    assert predict_tree(stump, np.array([0.9])) == 1.0
    with pytest.raises(DimensionMismatch):
        predict_tree(stump, np.array([0.1, 0.2]))


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 3)),
                  elements=st.floats(-5, 5, allow_nan=False)),
       st.integers(0, 1000))
def test_tree_invariants(X, seed):
    y = np.random.default_rng(seed).normal(size=X.shape[0])
    t = fit_tree(make_dataset(X, y), TreeParams(max_depth=4, seed=seed))
    internal = np.flatnonzero(t.left >= 0)
    # children covers sum to parent, root cover is n
    assert t.cover[0] == X.shape[0]
    np.testing.assert_array_equal(t.cover[t.left[internal]] + t.cover[t.right[internal]], t.cover[internal])
    # every accepted split does not increase the weighted child variance
    leaves = apply_tree(t, X)
    for node in internal:
        rows = np.flatnonzero(_reaches(t, X, node))
        go_left = X[rows, t.feature[node]] <= t.threshold[node]
        parent = y[rows].var() * rows.size
        children = y[rows][go_left].var() * go_left.sum() + y[rows][~go_left].var() * (~go_left).sum()
        assert children <= parent + 1e-9
    # training predictions are leaf means
    for leaf in np.unique(leaves):
        assert t.value[leaf] == pytest.approx(y[leaves == leaf].mean(), abs=1e-12)


def _reaches(t, X, node):
    out = np.zeros(X.shape[0], dtype=bool)
    for r, x in enumerate(X):
        k = 0
        while k != node and t.left[k] >= 0:
            k = t.left[k] if x[t.feature[k]] <= t.threshold[k] else t.right[k]
        out[r] = k == node
    return out


# ---------------------------------------------------------------- forest


def test_forest_defaults():
    assert ForestParams().n_trees == 150
    assert n_candidate_features("sqrt", 11) == 4
    assert n_candidate_features(None, 11) == 11


def test_forest_default_has_150_trees():
    data = make_dataset([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0])
    assert len(fit_random_forest(data).trees) == 150


def test_forest_mean_of_trees():
    m = ForestModel((Tree.leaf(0.0), Tree.leaf(1.0)), ForestParams(n_trees=2), 0, 1)
    assert predict_forest(m, np.array([0.3])) == 0.5
    same = ForestModel((Tree.leaf(0.25),) * 150, ForestParams(), 0, 1)
    assert predict_forest(same, np.array([0.3])) == 0.25


def test_forest_equals_tree_average(pp_small):
    m = fit_random_forest(pp_small, ForestParams(n_trees=7), seed=4)
    manual = sum(predict_tree(t, pp_small.rows) for t in m.trees) / 7
    np.testing.assert_array_equal(predict_forest(m, pp_small.rows), manual)
    for t in m.trees:
        assert t.cover[0] == pp_small.n


def test_forest_on_noiseless_linear_within_leaf_spread():
    data = synth_dataset(150, 2, LinearGenerator((2.0, 3.0), 1.0, 0.0), seed=3)
    m = fit_random_forest(data, ForestParams(n_trees=20), seed=0)
    x = data.rows[0]
    per_tree = np.array([predict_tree(t, x) for t in m.trees])
    assert per_tree.min() - 1e-12 <= predict_forest(m, x) <= per_tree.max() + 1e-12
    assert abs(predict_forest(m, x) - data.targets[0]) <= per_tree.max() - per_tree.min() + 1e-12


def test_forest_is_deterministic(pp_small):
    a = fit_random_forest(pp_small, ForestParams(n_trees=5), seed=9)
    b = fit_random_forest(pp_small, ForestParams(n_trees=5), seed=9)
    assert dumps_model(a) == dumps_model(b)


def test_forest_parallel_matches_serial(pp_small):
    a = fit_random_forest(pp_small, ForestParams(n_trees=4), seed=2)
    b = fit_random_forest(pp_small, ForestParams(n_trees=4), seed=2, n_jobs=2)
    assert dumps_model(a) == dumps_model(b)


# ---------------------------------------------------------------- boosting


def test_gbt_one_round_exact_fit():
    data = make_dataset([[0.0], [1.0]], [1.0, 3.0])
    m = fit_gbt(data, BoostParams(rounds=1, learning_rate=1.0, lambda_l2=0.0, alpha_l1=0.0, max_depth=1))
    assert m.base_score == 2.0
    np.testing.assert_array_equal(predict_gbt(m, data.rows), [1.0, 3.0])
    assert m.train_rmse == (0.0,)


def test_gbt_constant_targets():
    data = make_dataset(np.random.default_rng(0).random((10, 2)), np.full(10, 3.0))
    m = fit_gbt(data, BoostParams(rounds=5))
    assert m.base_score == 3.0
    for t in m.trees:
        assert np.all(t.value == 0.0)


def test_gbt_heavy_regularisation_shrinks_to_base(pp_small):
    m = fit_gbt(pp_small, BoostParams(rounds=10, lambda_l2=1e12))
    np.testing.assert_allclose(predict_gbt(m, pp_small.rows), m.base_score, atol=1e-9)


def test_gbt_arithmetic():
    empty = BoostedModel(1.0, (), BoostParams(), 0, 1)
    assert predict_gbt(empty, np.array([0.5])) == 1.0
    one = BoostedModel(1.0, (Tree.leaf(2.0),), BoostParams(learning_rate=0.1), 0, 1)
    assert predict_gbt(one, np.array([0.5])) == pytest.approx(1.2, abs=1e-15)


def test_gbt_training_loss_nonincreasing(pp_small):
    m = fit_gbt(pp_small, BoostParams(rounds=40))
    rmse = np.array(m.train_rmse)
    assert np.all(np.diff(rmse) <= 1e-12)
    for t in m.trees:
        assert t.cover[0] == pp_small.n


def test_gbt_is_deterministic_and_round_trips(pp_small, tmp_path):
    a = fit_gbt(pp_small, BoostParams(rounds=5, subsample=0.7), seed=3)
    b = fit_gbt(pp_small, BoostParams(rounds=5, subsample=0.7), seed=3)
    assert dumps_model(a) == dumps_model(b)
    save_model(a, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(predict_gbt(back, pp_small.rows), predict_gbt(a, pp_small.rows))
