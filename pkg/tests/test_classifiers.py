import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_table
from flowforge.classifiers import (
    ClassifierConfig,
    ForestModel,
    ForestParams,
    NaiveBayesModel,
    TreeModel,
    TreeNode,
    TreeParams,
    compute_bin_boundaries,
    gini_impurity,
    load,
    loads,
    predict,
    train_classifier,
    train_decision_tree,
    train_naive_bayes,
    train_random_forest,
)
from flowforge.classifiers.naive_bayes import fit_naive_bayes
from flowforge.dataset import LABEL_BINARY, TARGET, ColumnSchema
from flowforge.errors import ConfigError, DataError
from flowforge.partitioned import PartitionedExecutor

SEQ = PartitionedExecutor(1, 1)


def table_xy(X, y, n_classes=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    t = make_table(numeric={f"f{j}": X[:, j] for j in range(X.shape[1])},
                   labels={LABEL_BINARY: ("label", ["1"] * len(y))})
    return t.with_column(ColumnSchema("target", TARGET, False), y,
                         tuple(f"c{i}" for i in range(n_classes)))


# gini and binning --------------------------------------------------------------------


def test_gini_examples():
    assert gini_impurity([10, 0]) == 0.0
    assert gini_impurity([5, 5]) == 0.5
    assert gini_impurity([1, 2, 3]) == pytest.approx(22 / 36, abs=1e-12)
    with pytest.raises(DataError):
        gini_impurity([0, 0])


def test_bin_boundaries_examples():
    assert compute_bin_boundaries([0, 1, 0, 1]).tolist() == [0.5]
    assert compute_bin_boundaries([3, 3, 3]).tolist() == []
    b = compute_bin_boundaries(np.arange(100) / 99.0, max_bins=4)
    assert len(b) == 3
    for got, q in zip(b, (0.25, 0.5, 0.75)):
        assert abs(got - q) < 0.02
    with pytest.raises(ConfigError):
        compute_bin_boundaries([1, 2], max_bins=1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(2, 40))
def test_bin_boundaries_property(values, max_bins):
    b = compute_bin_boundaries(values, max_bins)
    assert len(b) <= max_bins - 1
    assert (np.diff(b) > 0).all()
    distinct = len(set(values))
    assert len(b) <= max(distinct - 1, 0)


def test_tree_params_validation():
    for bad in ({"max_depth": -1}, {"max_bins": 1}, {"impurity": "entropy"},
                {"min_instances_per_node": 0}, {"min_info_gain": -1.0}):
        with pytest.raises(ConfigError):
            TreeParams(**bad)


# decision tree -------------------------------------------------------------------------


def test_single_class_gives_leaf():
    m = train_decision_tree(table_xy([[0.1], [0.9], [0.4]], [1, 1, 1], 2), executor=SEQ)
    assert m.depth == 0 and len(m.nodes) == 1
    assert m.predict_many([[0.0], [1.0]]).tolist() == [1, 1]


def test_one_split():
    m = train_decision_tree(table_xy([[0.0], [1.0]], [0, 1]), executor=SEQ)
    assert m.depth == 1
    assert m.nodes[0].threshold == 0.5
    assert m.predict_many([[0.3], [0.5], [0.7]]).tolist() == [0, 0, 1]


def test_xor_depth_two():
    X = [[0, 0], [0, 1], [1, 0], [1, 1]]
    y = [0, 1, 1, 0]
    m = train_decision_tree(table_xy(X, y), params=TreeParams(max_depth=2), executor=SEQ)
    assert m.predict_many(X).tolist() == y


def test_tree_invariants(rng):
    X = rng.random((500, 3))
    y = ((X[:, 0] > 0.3) ^ (X[:, 1] > 0.6)).astype(int) + (X[:, 2] > 0.9)
    m = train_decision_tree(table_xy(X, y), params=TreeParams(max_depth=4), executor=SEQ)
    assert m.depth <= 4
    for node in m.nodes:
        assert sum(node.histogram) > 0
        if not node.is_leaf:
            assert node.left > 0 and node.right > 0


def test_training_accuracy_non_decreasing_in_depth(rng):
    X = rng.random((400, 3))
    y = ((X[:, 0] + X[:, 1] * X[:, 2]) > 0.6).astype(int)
    t = table_xy(X, y)
    last = 0.0
    for depth in range(0, 7):
        m = train_decision_tree(t, params=TreeParams(max_depth=depth), executor=SEQ)
        acc = float((m.predict_many(X) == y).mean())
        assert acc >= last
        last = acc


def test_linearly_separable_high_accuracy(rng):
    # diagonal boundary with a 0.05 margin on each side; depth-5 axis-aligned
    # trees cannot fit a zero-margin diagonal to 99%
    X = rng.random((4000, 2))
    X = X[np.abs(X[:, 0] + X[:, 1] - 1.0) > 0.1][:1000]
    assert len(X) == 1000
    y = (X[:, 0] + X[:, 1] > 1.0).astype(int)
    t = table_xy(X, y)
    dt = train_decision_tree(t, executor=SEQ)
    rf = train_random_forest(t, executor=SEQ)
    assert (dt.predict_many(X) == y).mean() >= 0.99
    assert (rf.predict_many(X) == y).mean() >= 0.99


def test_min_info_gain_and_min_instances_stop_growth(rng):
    X = rng.random((200, 2))
    y = (X[:, 0] > 0.5).astype(int)
    t = table_xy(X, y)
    assert train_decision_tree(t, params=TreeParams(min_info_gain=0.9), executor=SEQ).depth == 0
    m = train_decision_tree(t, params=TreeParams(min_instances_per_node=150), executor=SEQ)
    assert m.depth == 0


def test_empty_and_nan_training_rejected():
    with pytest.raises(DataError):
        train_decision_tree(table_xy(np.zeros((0, 1)), np.zeros(0), 2), executor=SEQ)
    with pytest.raises(DataError):
        train_decision_tree(table_xy([[np.nan], [1.0]], [0, 1]), executor=SEQ)


def test_arity_checked():
    m = train_decision_tree(table_xy([[0.0, 1.0], [1.0, 0.0]], [0, 1]), executor=SEQ)
    with pytest.raises(DataError):
        m.predict_many([[0.0]])
    with pytest.raises(DataError):
        predict(m, [0.0, 1.0, 2.0])
    assert predict(m, [1.0, 0.0]) == 1


def test_hand_built_tree_routes_left_on_equal():
    nodes = (TreeNode(0, (1, 1), 0, 0.5, 1, 2), TreeNode(0, (1, 0)), TreeNode(1, (0, 1)))
    m = TreeModel(("x",), 2, nodes)
    assert m.predict_many([[0.3], [0.5], [0.51]]).tolist() == [0, 0, 1]
    leaf = TreeModel(("x",), 3, (TreeNode(2, (0, 0, 4)),))
    assert leaf.predict_one([123.0]) == 2


# random forest --------------------------------------------------------------------------


def test_forest_reduces_to_tree(rng):
    X = rng.random((300, 4))
    y = (X[:, 0] * 2 + X[:, 3] > 1.2).astype(int)
    t = table_xy(X, y)
    tree = train_decision_tree(t, executor=SEQ)
    forest = train_random_forest(t, params=ForestParams(num_trees=1, bootstrap=False,
                                                        feature_subset="all"), executor=SEQ)
    assert forest.trees[0].nodes == tree.nodes
    Xt = rng.random((200, 4))
    assert (forest.predict_many(Xt) == tree.predict_many(Xt)).all()


def _stump(cls):
    return TreeModel(("x",), 2, (TreeNode(cls, (1, 1) if cls else (1, 0)),))


def test_forest_majority_and_tie():
    f = ForestModel(("x",), 2, (_stump(0), _stump(0), _stump(1)))
    assert f.predict_one([0.5]) == 0
    f = ForestModel(("x",), 2, (_stump(1), _stump(0)))
    assert f.predict_one([0.5]) == 0
    f = ForestModel(("x",), 2, (_stump(1), _stump(1), _stump(0)))
    assert f.predict_one([0.5]) == 1


def test_forest_seed_determinism(rng):
    X = rng.random((300, 5))
    y = (X[:, 1] > 0.4).astype(int)
    t = table_xy(X, y)
    a = train_random_forest(t, params=ForestParams(num_trees=5, seed=3), executor=SEQ)
    b = train_random_forest(t, params=ForestParams(num_trees=5, seed=3), executor=SEQ)
    c = train_random_forest(t, params=ForestParams(num_trees=5, seed=4), executor=SEQ)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_forest_subset_sizes():
    assert ForestParams().subset_size(19) == 5
    assert ForestParams(feature_subset="all").subset_size(19) == 19
    assert ForestParams(feature_subset="log2").subset_size(16) == 4
    assert ForestParams(feature_subset="onethird").subset_size(10) == 4
    assert ForestParams(feature_subset=50).subset_size(10) == 10
    for bad in ({"num_trees": 0}, {"feature_subset": "half"}, {"feature_subset": 0}):
        with pytest.raises(ConfigError):
            ForestParams(**bad)


# naive Bayes ------------------------------------------------------------------------------


def test_nb_hand_example():
    t = table_xy([[1, 0], [1, 0], [0, 1], [0, 1]], [0, 0, 1, 1])
    m = train_naive_bayes(t)
    theta = np.asarray(m.log_likelihoods)
    assert theta[0] == pytest.approx([math.log(0.75), math.log(0.25)], abs=1e-12)
    assert theta[1] == pytest.approx([math.log(0.25), math.log(0.75)], abs=1e-12)
    assert m.log_priors[0] == m.log_priors[1]
    assert m.predict_one([1, 0]) == 0


def test_nb_zero_vector_uses_priors():
    m = train_naive_bayes(table_xy([[1, 0], [0, 1], [0, 1]], [0, 1, 1]))
    assert m.predict_one([0, 0]) == 1


def test_nb_posterior_tie_picks_lowest():
    m = NaiveBayesModel(("a", "b"), 3, (math.log(0.2), math.log(0.4), math.log(0.4)),
                        ((math.log(0.5),) * 2,) * 3)
    assert m.predict_one([0.3, 0.7]) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 5), st.integers(2, 4), st.integers(0, 2**31))
def test_nb_probabilities_sum_to_one(n, d, c, seed):
    r = np.random.default_rng(seed)
    X = r.random((n, d))
    y = r.integers(0, c, n)
    priors, theta = fit_naive_bayes(X, y, c, 1.0)
    assert np.exp(theta).sum(axis=1) == pytest.approx(np.ones(c), abs=1e-12)
    assert np.exp(priors).sum() == pytest.approx(1.0, abs=1e-12)


def test_nb_rejects_negative_and_bad_smoothing():
    with pytest.raises(DataError):
        train_naive_bayes(table_xy([[-1.0], [1.0]], [0, 1]))
    with pytest.raises(ConfigError):
        train_naive_bayes(table_xy([[1.0], [1.0]], [0, 1]), smoothing=0.0)


def test_nb_unseen_class_never_predicted():
    m = train_naive_bayes(table_xy([[1.0], [0.5]], [0, 0], n_classes=3))
    assert math.isinf(m.log_priors[1])
    assert set(m.predict_many([[0.0], [1.0]]).tolist()) == {0}
    again = loads(m.to_json())
    assert again.log_priors == m.log_priors


# serialisation and dispatch ------------------------------------------------------------------


@pytest.mark.parametrize("name", ["DT", "RF", "NB"])
def test_round_trip_predictions(name, rng, tmp_path):
    X = rng.random((300, 3))
    y = (X[:, 0] > X[:, 1]).astype(int) + (X[:, 2] > 0.8)
    m = train_classifier(ClassifierConfig(name, {"num_trees": 3} if name == "RF" else {}),
                         table_xy(X, y), executor=SEQ)
    m.save(tmp_path / "m.json")
    back = load(tmp_path / "m.json")
    Xt = rng.random((500, 3))
    assert (back.predict_many(Xt) == m.predict_many(Xt)).all()
    assert back.to_json() == m.to_json()


def test_classifier_config_errors(rng):
    with pytest.raises(ConfigError):
        ClassifierConfig("SVM")
    t = table_xy(rng.random((20, 2)), rng.integers(0, 2, 20))
    with pytest.raises(ConfigError):
        train_classifier(ClassifierConfig("DT", {"depth": 3}), t)
    with pytest.raises(ConfigError):
        train_classifier(ClassifierConfig("RF", {"trees": 3}), t)
    assert ClassifierConfig("rf").name == "RF"


def test_forest_accepts_flat_tree_keys(rng):
    t = table_xy(rng.random((50, 2)), rng.integers(0, 2, 50))
    m = train_classifier(ClassifierConfig("RF", {"num_trees": 2, "max_depth": 2}), t, executor=SEQ)
    assert m.params.tree.max_depth == 2
    assert all(tree.depth <= 2 for tree in m.trees)
    assert ClassifierConfig("RF", {"max_depth": 2}).resolved()["tree"]["max_depth"] == 2
