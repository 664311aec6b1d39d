import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aesthlab.errors import (
    DimensionMismatch,
    EmptyInput,
    IndexOutOfRange,
    KExceedsN,
    MissingCovers,
    SingularSystem,
    TooManyFeatures,
)
from aesthlab.metrics import LinearModel, fit_ols
from aesthlab.models import predict
from aesthlab.shapley import (
    ENUMERATE_ALL,
    Attribution,
    BackgroundSet,
    PredictOracle,
    Sample,
    brute_force_tree_shap,
    dependence_series,
    exact_shapley,
    explain,
    full_interaction_matrix,
    interaction_index,
    kernel_shap,
    kmeans_summarize,
    read_attributions_csv,
    summary_ranking,
    tree_shap,
    value_function,
    write_attributions_csv,
)
from aesthlab.tabular import LinearGenerator, synth_dataset
from aesthlab.trees import BoostParams, ForestParams, Tree, fit_gbt, fit_random_forest

from conftest import make_dataset


def product(X):
    return X[:, 0] * X[:, 1]


def permutation_shapley(f, x, bg_points, bg_weights):
    """Shapley values as the average marginal contribution over all orderings."""
    d = x.size
    w = bg_weights / bg_weights.sum()

    def v(S):
        Z = bg_points.copy()
        Z[:, list(S)] = x[list(S)]
        return float(f(Z) @ w)

    phi = np.zeros(d)
    for order in itertools.permutations(range(d)):
        known = []
        for i in order:
            before = v(known)
            known.append(i)
            phi[i] += v(known) - before
    return phi / math.factorial(d)


# ---------------------------------------------------------------- k-means


def test_kmeans_separable_pair():
    bg = kmeans_summarize(np.array([[0.0], [10.0]]), k=2, seed=0)
    assert sorted(bg.points[:, 0].tolist()) == [0.0, 10.0]
    assert bg.weights.tolist() == [1.0, 1.0]


def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(0).normal(size=(30, 3))
    bg = kmeans_summarize(X, k=1)
    np.testing.assert_allclose(bg.points[0], X.mean(0), atol=1e-14)
    assert bg.weights.tolist() == [30.0]


def test_kmeans_k_exceeds_n():
    with pytest.raises(KExceedsN):
        kmeans_summarize(np.zeros((2, 1)), k=3)


@given(st.integers(1, 60), st.integers(1, 5), st.integers(0, 10_000))
def test_kmeans_contract(n, k, seed):
    k = min(k, n)
    X = np.random.default_rng(seed).normal(size=(n, 2))
    bg = kmeans_summarize(X, k, seed)
    assert bg.weights.sum() == n
    assert np.all(np.diff(bg.objective_trace) <= 1e-9)


# ---------------------------------------------------------------- value function and exact


def test_value_function_product():
    o = PredictOracle(product, 2)
    bg = BackgroundSet.uniform([[0.0, 0.0]])
    x = np.array([1.0, 1.0])
    assert value_function(o, x, [0], bg) == 0.0
    assert value_function(o, x, [1], bg) == 0.0
    assert value_function(o, x, [0, 1], bg) == 1.0
    assert value_function(o, x, [], bg) == 0.0
    with pytest.raises(IndexOutOfRange):
        value_function(o, x, [2], bg)


def test_value_function_ends():
    rng = np.random.default_rng(1)
    w = rng.normal(size=3)
    o = PredictOracle(lambda X: np.sin(X @ w), 3)
    bg = BackgroundSet(rng.normal(size=(4, 3)), np.array([1.0, 2.0, 3.0, 4.0]))
    x = rng.normal(size=3)
    assert value_function(o, x, [0, 1, 2], bg) == o(x)[0]
    expected = np.sin(bg.points @ w) @ (bg.weights / bg.weights.sum())
    assert value_function(o, x, [], bg) == pytest.approx(expected, abs=1e-15)


def test_exact_product_symmetry():
    a = exact_shapley(PredictOracle(product, 2), np.array([1.0, 1.0]), BackgroundSet.uniform([[0.0, 0.0]]))
    assert a.phis.tolist() == [0.5, 0.5]


def test_exact_linear_case():
    o = PredictOracle(lambda X: 2 * X[:, 0] + 3 * X[:, 1] + 1, 2)
    a = exact_shapley(o, np.array([1.0, 1.0]), BackgroundSet.uniform([[0.5, 0.5]]))
    assert a.base_value == 3.5
    np.testing.assert_allclose(a.phis, [1.0, 1.5], atol=1e-12)


def test_exact_too_many_features():
    with pytest.raises(TooManyFeatures):
        exact_shapley(PredictOracle(lambda X: X[:, 0], 21), np.zeros(21), BackgroundSet.uniform(np.zeros((1, 21))))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        exact_shapley(PredictOracle(product, 2), np.zeros(3), BackgroundSet.uniform([[0.0, 0.0]]))


@given(st.integers(0, 10_000), st.integers(2, 4))
def test_exact_matches_permutation_oracle(seed, d):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(d, d))

    def f(X):
        return np.tanh(X @ W).sum(1) + X[:, 0] * X[:, -1]

    bg = BackgroundSet(rng.normal(size=(3, d)), rng.uniform(0.5, 2, size=3))
    x = rng.normal(size=d)
    a = exact_shapley(PredictOracle(f, d), x, bg)
    np.testing.assert_allclose(a.phis, permutation_shapley(f, x, bg.points, bg.weights), atol=1e-12)
    assert a.total == pytest.approx(f(x[None])[0], abs=1e-12)


def test_dummy_feature_gets_zero():
    o = PredictOracle(lambda X: X[:, 0] ** 2 + X[:, 2], 4)
    rng = np.random.default_rng(0)
    bg = BackgroundSet.uniform(rng.normal(size=(5, 4)))
    x = rng.normal(size=4)
    for a in (exact_shapley(o, x, bg), kernel_shap(o, x, bg)):
        assert abs(a.phis[1]) <= 1e-12 and abs(a.phis[3]) <= 1e-12


def test_symmetric_features_swap():
    o = PredictOracle(lambda X: X[:, 0] * X[:, 1] + X[:, 2], 3)
    bg = BackgroundSet.uniform([[0.2, 0.2, 0.0], [0.5, 0.5, 1.0]])
    a = exact_shapley(o, np.array([0.9, 0.1, 0.4]), bg)
    b = exact_shapley(o, np.array([0.1, 0.9, 0.4]), bg)
    assert a.phis[0] == pytest.approx(b.phis[1], abs=1e-14)
    assert a.phis[1] == pytest.approx(b.phis[0], abs=1e-14)


# ---------------------------------------------------------------- KernelSHAP


def test_kernel_matches_exact_on_forest(pp_small):
    forest = fit_random_forest(pp_small, ForestParams(n_trees=10), seed=0)
    o = PredictOracle.for_model(forest)
    bg = kmeans_summarize(pp_small.rows, 3, 0)
    for x in pp_small.rows[:5]:
        e, k = exact_shapley(o, x, bg), kernel_shap(o, x, bg, ENUMERATE_ALL)
        assert np.max(np.abs(e.phis - k.phis)) <= 1e-6
        assert e.base_value == k.base_value


def test_kernel_linear_closed_form():
    rng = np.random.default_rng(4)
    w, b = rng.normal(size=5), 0.3
    model = LinearModel(b, w)
    mu = rng.normal(size=5)
    x = rng.normal(size=5)
    a = kernel_shap(PredictOracle.for_model(model), x, BackgroundSet.uniform([mu]))
    np.testing.assert_allclose(a.phis, w * (x - mu), atol=1e-10)


@given(st.integers(1, 200), st.integers(0, 10_000))
def test_sampled_kernel_sum_constraint(m, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(4, 4))
    o = PredictOracle(lambda X: np.tanh(X @ W).sum(1), 4)
    bg = BackgroundSet.uniform(rng.normal(size=(2, 4)))
    x = rng.normal(size=4)
    try:
        a = kernel_shap(o, x, bg, Sample(m, seed))
    except SingularSystem as err:
        assert err.coalitions  # too few distinct coalitions; the error names them
        return
    assert a.total == pytest.approx(o(x)[0], abs=1e-12)


def test_sampled_kernel_singular_reports_coalitions():
    o = PredictOracle(lambda X: X.sum(1), 5)
    with pytest.raises(SingularSystem) as info:
        kernel_shap(o, np.ones(5), BackgroundSet.uniform(np.zeros((1, 5))), Sample(1, 0))
    assert len(info.value.coalitions) == 1


def test_sampled_kernel_converges_to_exact():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(6, 6))
    o = PredictOracle(lambda X: np.tanh(X @ W).sum(1), 6)
    bg = BackgroundSet.uniform(rng.normal(size=(3, 6)))
    x = rng.normal(size=6)
    e = exact_shapley(o, x, bg)
    s = kernel_shap(o, x, bg, Sample(20_000, 1))
    assert np.max(np.abs(e.phis - s.phis)) < 0.05


# ---------------------------------------------------------------- TreeSHAP


def test_tree_shap_constant_tree():
    a = tree_shap(Tree.leaf(0.4, 10.0, n_features=3), np.array([1.0, 2.0, 3.0]))
    assert a.base_value == 0.4
    assert a.phis.tolist() == [0.0, 0.0, 0.0]


def test_tree_shap_stump():
    stump = Tree.stump(0, 0.5, 0.0, 1.0, 5.0, 5.0, n_features=3)
    a = tree_shap(stump, np.array([0.9, 0.0, 0.0]))
    assert a.base_value == 0.5
    assert a.phis.tolist() == [0.5, 0.0, 0.0]


def test_tree_shap_missing_covers():
    stump = Tree.stump(0, 0.5, 0.0, 1.0, 0.0, 5.0)
    with pytest.raises(MissingCovers):
        tree_shap(stump, np.array([0.2]))
    with pytest.raises(MissingCovers):
        tree_shap(LinearModel(0.0, np.ones(2)), np.zeros(2))


@pytest.mark.parametrize("seed", range(6))
def test_tree_shap_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 9))
    X = rng.random((80, d))
    y = X[:, 0] * X[:, -1] + rng.normal(0, 0.1, 80)
    model = fit_random_forest(make_dataset(X, y), ForestParams(n_trees=3, max_depth=3), seed=seed)
    for x in X[:5]:
        fast, brute = tree_shap(model, x), brute_force_tree_shap(model, x)
        assert np.max(np.abs(fast.phis - brute.phis)) <= 1e-8
        assert fast.base_value == pytest.approx(brute.base_value, abs=1e-12)


def test_tree_shap_forest_is_mean_of_trees(pp_small):
    forest = fit_random_forest(pp_small, ForestParams(n_trees=4), seed=1)
    x = pp_small.rows[3]
    per_tree = [tree_shap(t, x).phis for t in forest.trees]
    np.testing.assert_array_equal(tree_shap(forest, x).phis, np.sum(per_tree, axis=0) / 4)


def test_tree_shap_gbt_local_accuracy(pp_small):
    model = fit_gbt(pp_small, BoostParams(rounds=20))
    for x in pp_small.rows[:10]:
        a = tree_shap(model, x)
        assert a.total == pytest.approx(predict(model, x)[0], abs=1e-9)


def test_tree_shap_unused_feature_is_zero():
    X = np.random.default_rng(0).random((60, 3))
    y = X[:, 0] + X[:, 2]
    model = fit_random_forest(make_dataset(X, y), ForestParams(n_trees=3, max_features=None), seed=0)
    used = {int(f) for t in model.trees for f in t.feature if f >= 0}
    for j in set(range(3)) - used:
        assert tree_shap(model, X[0]).phis[j] == 0.0
    X2 = np.column_stack([X, np.zeros(60)])
    model2 = fit_random_forest(make_dataset(X2, y), ForestParams(n_trees=3), seed=0)
    assert tree_shap(model2, X2[0]).phis[3] == 0.0


# ---------------------------------------------------------------- interactions


def test_interactions_product_model():
    M = full_interaction_matrix(PredictOracle(product, 2), np.array([1.0, 1.0]), BackgroundSet.uniform([[0.0, 0.0]]))
    np.testing.assert_allclose(M.values, [[0.0, 0.5], [0.5, 0.0]], atol=1e-15)
    assert interaction_index(PredictOracle(product, 2), np.array([1.0, 1.0]),
                             BackgroundSet.uniform([[0.0, 0.0]]), 0, 1) == 0.5


def test_interactions_additive_model_vanish():
    o = PredictOracle(lambda X: np.sin(X[:, 0]) + X[:, 1] ** 2 + np.exp(X[:, 2]), 3)
    rng = np.random.default_rng(2)
    M = full_interaction_matrix(o, rng.normal(size=3), BackgroundSet.uniform(rng.normal(size=(4, 3))))
    off = M.values - np.diag(np.diag(M.values))
    assert np.max(np.abs(off)) <= 1e-9


@given(st.integers(0, 10_000))
def test_interaction_rows_sum_to_phi(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(4, 4))
    o = PredictOracle(lambda X: np.tanh(X @ W).sum(1) * X[:, 0], 4)
    bg = BackgroundSet.uniform(rng.normal(size=(2, 4)))
    x = rng.normal(size=4)
    M = full_interaction_matrix(o, x, bg)
    np.testing.assert_allclose(M.values.sum(1), exact_shapley(o, x, bg).phis, atol=1e-9)
    np.testing.assert_array_equal(M.values, M.values.T)


def test_interaction_errors():
    o = PredictOracle(product, 2)
    bg = BackgroundSet.uniform([[0.0, 0.0]])
    with pytest.raises(IndexOutOfRange):
        interaction_index(o, np.ones(2), bg, 0, 0)
    with pytest.raises(TooManyFeatures):
        full_interaction_matrix(PredictOracle(lambda X: X[:, 0], 17), np.zeros(17), BackgroundSet.uniform(np.zeros((1, 17))))


# ---------------------------------------------------------------- report series


def _att(phis):
    return Attribution(0.0, np.asarray(phis, dtype=float), np.empty(0))


def test_summary_ranking():
    assert summary_ranking([_att([0.1, -0.4])]) == [("f2", 0.4), ("f1", 0.1)]
    ranking = summary_ranking([_att([0.1, 0.0, -0.3]), _att([-0.2, 0.0, 0.1])], ["a", "b", "c"])
    assert ranking[-1] == ("b", 0.0)
    with pytest.raises(EmptyInput):
        summary_ranking([])


def test_dependence_series():
    s = dependence_series([_att([0.3, 0.7])], np.array([[1.5, 2.5]]), 0, 1)
    assert s.points == [(1.5, 0.3, 2.5)]
    same = dependence_series([_att([0.3, 0.7])], np.array([[1.5, 2.5]]), 1, 1)
    assert same.points[0][0] == same.points[0][2]
    with pytest.raises(IndexOutOfRange):
        dependence_series([_att([0.3, 0.7])], np.array([[1.5, 2.5]]), 0, 2)


def test_dependence_linear_model_is_affine():
    data = synth_dataset(60, 3, LinearGenerator((2.0, -1.0, 0.5), 0.2, 0.0), seed=0)
    model = fit_ols(data)
    atts = explain(model, data.rows[:20], "kernel", kmeans_summarize(data.rows, 3, 0))
    pts = np.array(dependence_series(atts, data.rows[:20], 0, 2).points)
    coef = np.polyfit(pts[:, 0], pts[:, 1], 1)
    assert np.max(np.abs(np.polyval(coef, pts[:, 0]) - pts[:, 1])) < 1e-9


def test_attribution_csv_round_trip(tmp_path, pp_small):
    model = fit_gbt(pp_small, BoostParams(rounds=5))
    atts = explain(model, pp_small.rows[:4], "tree")
    write_attributions_csv(atts, pp_small.feature_names, tmp_path / "a.csv")
    names, back = read_attributions_csv(tmp_path / "a.csv")
    assert tuple(names) == pp_small.feature_names
    for a, b in zip(atts, back):
        assert a.base_value == b.base_value
        assert a.phis.tobytes() == b.phis.tobytes()
        assert a.instance_id == b.instance_id
