import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mobsal.forest import ForestConfig, ForestModel, Tree, build_tree, forest_fit, forest_predict
from oracles import exhaustive_cart

SINGLE = ForestConfig(n_trees=1, features_per_split="all", bootstrap=False)


def test_pure_input_gives_single_leaves():
    X = np.random.default_rng(0).normal(size=(30, 3))
    model = forest_fit(X, np.full(30, 2), ForestConfig(n_trees=5), n_classes=4)
    assert all(t.n_nodes == 1 for t in model.trees)
    cls, p = forest_predict(model, X[0])
    assert cls == 2 and p.tolist() == [0, 0, 1, 0]


def test_separable_line():
    x = np.linspace(-1, 1, 200)[:, None]
    y = (x[:, 0] >= 0).astype(int)
    model = forest_fit(x, y, ForestConfig(n_trees=10, rng_seed=3))
    assert (model.predict(x) == y).all()


@pytest.mark.parametrize("seed", range(100))
def test_single_tree_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    n, d, c = int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 4))
    X = rng.integers(0, 4, size=(n, d)).astype(float) + rng.choice([0.0, 0.5], size=(n, d))
    y = rng.integers(0, c, n)
    leaf = int(rng.integers(1, 3))
    cfg = ForestConfig(n_trees=1, features_per_split="all", bootstrap=False, min_samples_leaf=leaf)
    tree = forest_fit(X, y, cfg, n_classes=c).trees[0]
    assert tree.to_json() == exhaustive_cart(X, y, c, leaf)


def test_ties_prefer_lowest_feature_then_threshold():
    # both features separate the classes perfectly
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    tree = forest_fit(X, [0, 0, 1, 1], SINGLE).trees[0]
    assert tree.feature[0] == 0 and tree.threshold[0] == 1.5
    # on one feature, x <= 0.5 and x <= 2.5 give the same decrease
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    tree = build_tree(X, np.array([0, 1, 1, 0]), 2, SINGLE, np.random.default_rng(0))
    assert tree.threshold[0] == 0.5


def test_every_split_lowers_impurity():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 6))
    y = (X[:, 0] + rng.normal(0, 1, 300) > 0).astype(int) + (X[:, 3] > 1)
    model = forest_fit(X, y, ForestConfig(n_trees=8, rng_seed=1))
    for t in model.trees:
        internal = t.feature >= 0
        assert (t.gain[internal] > 0).all()
        assert (t.counts[~internal].sum(1) >= 1).all()


def test_min_leaf_respected():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(200, 4)), rng.integers(0, 3, 200)
    model = forest_fit(X, y, ForestConfig(n_trees=4, min_samples_leaf=7, max_depth=5))
    for t in model.trees:
        assert (t.counts[t.feature < 0].sum(1) >= 7).all()


def test_soft_vote_tie_goes_to_class_zero():
    leaf0 = Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([[1, 0]]), np.zeros(1))
    leaf1 = Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([[0, 1]]), np.zeros(1))
    cls, p = forest_predict(ForestModel([leaf0, leaf1], 2), [0.3])
    assert cls == 0 and p.tolist() == [0.5, 0.5]


def test_probabilities_average_the_trees():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(120, 5)), rng.integers(0, 4, 120)
    model = forest_fit(X, y, ForestConfig(n_trees=7, rng_seed=4))
    Q = rng.normal(size=(50, 5))
    by_hand = np.zeros((50, 4))
    for t in model.trees:
        leaves = t.apply(Q)
        by_hand += t.counts[leaves] / t.counts[leaves].sum(1, keepdims=True)
    np.testing.assert_allclose(model.predict_proba(Q), by_hand / 7, rtol=1e-12)
    np.testing.assert_allclose(model.predict_proba(Q).sum(1), 1, atol=1e-12)


def test_fit_is_deterministic_and_json_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(80, 4)), rng.integers(0, 3, 80)
    a = forest_fit(X, y, ForestConfig(n_trees=6, rng_seed=9))
    b = forest_fit(X, y, ForestConfig(n_trees=6, rng_seed=9))
    assert [t.to_json() for t in a.trees] == [t.to_json() for t in b.trees]
    a.save(tmp_path / "f.json")
    back = ForestModel.load(tmp_path / "f.json")
    assert back.config == a.config
    np.testing.assert_array_equal(back.predict_proba(X), a.predict_proba(X))


@given(st.permutations(list(range(12))), st.integers(0, 1000))
def test_row_order_is_irrelevant_given_the_bootstrap_indices(perm, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.integers(0, 3, size=(12, 3)).astype(float), rng.integers(0, 3, 12)
    sample = rng.integers(0, 12, 12)
    perm = np.array(perm)
    inv = np.argsort(perm)
    cfg = ForestConfig(n_trees=1, features_per_split=2)
    a = build_tree(X, y, 3, cfg, np.random.default_rng(seed), sample)
    b = build_tree(X[perm], y[perm], 3, cfg, np.random.default_rng(seed), inv[sample])
    assert a.to_json() == b.to_json()


def test_bad_inputs():
    with pytest.raises(ValueError):
        forest_fit(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        forest_fit([[0.0, np.nan]], [0])
    with pytest.raises(ValueError):
        forest_fit([[0.0], [1.0]], [0, 3], n_classes=2)
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    model = forest_fit([[0.0], [1.0]], [0, 1], SINGLE)
    with pytest.raises(ValueError):
        model.predict_proba([[np.inf]])
