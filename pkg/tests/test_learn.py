from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from dropnet.learn import (
    DEFAULT_GRID,
    ForestConfig,
    ForestModel,
    GridSearchError,
    balanced_class_weights,
    bootstrap_counts,
    expand_grid,
    fit_forest,
    fit_logit,
    fit_tree,
    grid_search,
    inner_folds,
    logit_objective,
)
from dropnet.metrics import roc_auc

ALL = ForestConfig(max_features=None)


# --------------------------------------------------------------------------
# single trees

def test_pure_labels_single_leaf():
    t = fit_tree(np.arange(6.0)[:, None], np.ones(6, int))
    assert t.n_nodes == 1
    assert t.feature_importances.tolist() == [0.0]


def test_one_dimensional_separable():
    x = np.linspace(-1, 1, 10)[:, None]
    y = (x[:, 0] >= 0).astype(int)
    t = fit_tree(x, y, config=ALL)
    assert t.max_depth == 1
    assert ((t.predict_proba(x) >= 0.5) == y).all()
    assert -0.12 < t.threshold[0] < 0.12


def _weighted_gain(X, y, w, j, t):
    left = X[:, j] <= t
    def term(mask):
        w0 = sum(Fraction(w[i]) for i in np.flatnonzero(mask) if y[i] == 0)
        w1 = sum(Fraction(w[i]) for i in np.flatnonzero(mask) if y[i] == 1)
        return (w0 * w0 + w1 * w1) / (w0 + w1)
    if left.all() or not left.any():
        return None
    return term(left) + term(~left) - term(np.ones(len(y), bool))


def best_split_oracle(X, y, w):
    """Exhaustive root split: max weighted Gini decrease, ties to lowest (column, threshold)."""
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j]))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            g = _weighted_gain(X, y, w, j, t)
            if g is not None and g > 0 and (best is None or g > best[0]):
                best = (g, j, t)
    return best


def test_root_split_matches_exhaustive_search():
    rng = np.random.default_rng(17)
    checked = 0
    for _ in range(400):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 4))
        X = rng.integers(0, 2, size=(n, d)).astype(float)
        if rng.random() < 0.5:
            X[:, 0] = rng.integers(0, 4, size=n)
        y = rng.integers(0, 2, size=n)
        w = rng.integers(1, 4, size=n).astype(float)
        tree = fit_tree(X, y, w, ALL)
        expect = best_split_oracle(X, y, w)
        if expect is None or len(set(y)) < 2:
            assert tree.feature[0] == -1
        else:
            assert (tree.feature[0], tree.threshold[0]) == (expect[1], expect[2])
            checked += 1
    assert checked > 150


def test_every_split_decreases_impurity(rng):
    X = rng.normal(size=(120, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=120) > 0).astype(int)
    t = fit_tree(X, y, config=ALL)
    stack = [(0, np.arange(120))]
    while stack:
        node, idx = stack.pop()
        if t.left[node] < 0:
            continue
        j, thr = t.feature[node], t.threshold[node]
        assert _weighted_gain(X[idx], y[idx], np.ones(len(idx)), j, thr) > 0
        go = X[idx, j] <= thr
        stack += [(t.left[node], idx[go]), (t.right[node], idx[~go])]
    assert t.feature_importances.sum() == pytest.approx(1.0)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        fit_tree(np.zeros((0, 2)), np.zeros(0, int))


def test_class_weight_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n1 = int(rng.integers(2, 6))
        n0 = 2 * n1
        X = rng.integers(0, 3, size=(n0 + n1, 3)).astype(float)
        y = np.array([0] * n0 + [1] * n1)
        balanced = fit_tree(X, y, balanced_class_weights(y)[y], ALL)
        Xd = np.vstack([X, X[y == 1]])
        yd = np.concatenate([y, y[y == 1]])
        doubled = fit_tree(Xd, yd, None, ALL)
        np.testing.assert_allclose(balanced.predict_proba(X), doubled.predict_proba(X), atol=1e-6)


def test_balanced_weights_formula():
    y = np.array([0, 0, 0, 1])
    assert balanced_class_weights(y).tolist() == [4 / 6, 4 / 2]


# --------------------------------------------------------------------------
# forests

def _blobs(rng, n=400, gap=6.0):
    y = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, 2)) + gap * y[:, None]
    return X, y


def test_separable_blobs():
    rng = np.random.default_rng(42)
    X, y = _blobs(rng, 600)
    m = fit_forest(X[:400], y[:400], ForestConfig(n_trees=100, seed=1))
    assert (m.predict(X[400:]) == y[400:]).mean() >= 0.99


def test_permuted_labels_give_chance_auc():
    aucs = []
    for s in range(10):
        rng = np.random.default_rng(1000 + s)
        X = rng.normal(size=(400, 5))
        y = rng.permutation(np.arange(400) % 2)
        m = fit_forest(X[:300], y[:300], ForestConfig(n_trees=100, seed=s))
        aucs.append(roc_auc(m.predict_proba(X[300:]), y[300:]))
    assert 0.45 <= np.mean(aucs) <= 0.55


def test_forest_determinism(rng):
    X, y = _blobs(rng, 200, gap=1.0)
    cfg = ForestConfig(n_trees=30, seed=9)
    a, b = fit_forest(X, y, cfg), fit_forest(X, y, cfg)
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.feature_importances, b.feature_importances)
    c = fit_forest(X, y, ForestConfig(n_trees=30, seed=10))
    assert c.to_json() != a.to_json()


def test_importances_normalised(rng):
    X = rng.normal(size=(300, 6))
    y = (X[:, 2] > 0).astype(int)
    m = fit_forest(X, y, ForestConfig(n_trees=40))
    assert m.feature_importances.sum() == pytest.approx(1.0, abs=1e-9)
    assert (m.feature_importances >= 0).all()
    assert np.argmax(m.feature_importances) == 2


def test_bootstrap_is_pure_function_of_seed_and_index():
    a, sa = bootstrap_counts(50, 3, 7)
    b, sb = bootstrap_counts(50, 3, 7)
    assert np.array_equal(a, b) and sa == sb
    assert a.sum() == 50
    c, _ = bootstrap_counts(50, 3, 8)
    assert not np.array_equal(a, c)


def test_tree_prefix_independent_of_forest_size(rng):
    X, y = _blobs(rng, 150, gap=1.0)
    small = fit_forest(X, y, ForestConfig(n_trees=10, seed=2))
    big = fit_forest(X, y, ForestConfig(n_trees=40, seed=2))
    assert np.array_equal(small.predict_proba(X), big.predict_proba(X, n_trees=10))


def test_depth_truncation_equals_depth_limited_fit(rng):
    X, y = _blobs(rng, 200, gap=0.8)
    full = fit_forest(X, y, ForestConfig(n_trees=60, seed=5))
    for depth in (0, 1, 3, 8):
        limited = fit_forest(X, y, ForestConfig(n_trees=25, max_depth=depth, seed=5))
        assert np.array_equal(limited.predict_proba(X), full.predict_proba(X, n_trees=25, max_depth=depth))


def test_json_round_trip(rng):
    X, y = _blobs(rng, 100, gap=1.0)
    m = fit_forest(X, y, ForestConfig(n_trees=12, max_depth=5, seed=3))
    back = ForestModel.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
    assert np.array_equal(back.predict_proba(X, max_depth=2), m.predict_proba(X, max_depth=2))
    with pytest.raises(ValueError):
        ForestModel.from_dict({"format": "other"})


def test_forest_input_validation():
    with pytest.raises(ValueError):
        fit_forest(np.zeros((4, 2)), np.zeros(4, int))
    with pytest.raises(ValueError):
        fit_forest(np.array([[np.nan], [1.0]]), np.array([0, 1]))
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)
    with pytest.raises(ValueError):
        ForestConfig(min_samples_leaf=0)


def test_features_per_split():
    assert ForestConfig().features_per_split(58) == 7
    assert ForestConfig(max_features=None).features_per_split(5) == 5
    assert ForestConfig(max_features=3).features_per_split(2) == 2


# --------------------------------------------------------------------------
# logistic regression

def test_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(31)
    h = 1e-6
    for _ in range(100):
        n, d = int(rng.integers(5, 40)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        w = rng.uniform(0.2, 3.0, size=n)
        w = w / w.mean()
        beta = rng.normal(size=d)
        b0 = float(rng.normal())
        l2 = float(rng.uniform(0, 2))
        _, gb, gi = logit_objective(beta, b0, X, y, w, l2)
        fd = np.empty(d + 1)
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            fd[k] = (logit_objective(beta + e, b0, X, y, w, l2)[0]
                     - logit_objective(beta - e, b0, X, y, w, l2)[0]) / (2 * h)
        fd[d] = (logit_objective(beta, b0 + h, X, y, w, l2)[0]
                 - logit_objective(beta, b0 - h, X, y, w, l2)[0]) / (2 * h)
        g = np.append(gb, gi)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_logit_converges_and_gradient_vanishes(rng):
    X = rng.normal(size=(200, 3))
    y = (X @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=200) > 0).astype(int)
    m = fit_logit(X, y, l2=0.1)
    assert m.converged
    Xs = (X - m.mean) / m.scale
    _, gb, gi = logit_objective(m.coef, m.intercept, Xs, y.astype(float), np.ones(200), 0.1)
    assert max(np.abs(gb).max(), abs(gi)) <= 1e-6
    p = m.predict_proba(X)
    assert ((p > 0) & (p < 1)).all()


def test_logit_separable_stays_finite():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    m = fit_logit(X, np.array([0, 0, 1, 1]), l2=0.01)
    assert np.isfinite(m.coef).all() and m.converged


def test_logit_heavy_penalty_predicts_prior(rng):
    X = rng.normal(size=(100, 4))
    y = (rng.random(100) < 0.3).astype(int)
    m = fit_logit(X, y, l2=1e6)
    assert np.abs(m.coef).max() < 1e-5
    assert m.predict_proba(X) == pytest.approx(np.full(100, y.mean()), abs=1e-5)


def test_logit_rejects_non_finite():
    with pytest.raises(ValueError):
        fit_logit(np.array([[np.inf], [0.0]]), np.array([0, 1]))


# --------------------------------------------------------------------------
# grid search

def test_expand_grid_order_and_validation():
    cfgs = expand_grid(DEFAULT_GRID)
    assert len(cfgs) == 12
    assert (cfgs[0].n_trees, cfgs[0].max_depth, cfgs[0].min_samples_leaf) == (100, None, 1)
    assert (cfgs[1].n_trees, cfgs[1].max_depth, cfgs[1].min_samples_leaf) == (100, None, 5)
    with pytest.raises(GridSearchError):
        expand_grid({"learning_rate": [0.1]})
    with pytest.raises(GridSearchError):
        expand_grid({"n_trees": []})


def test_inner_folds_round_robin():
    cohorts = np.repeat([2001, 2002, 2003, 2004, 2005], 2)
    folds = inner_folds(cohorts, 3)
    assert [sorted(set(cohorts[f])) for f in folds] == [[2001, 2004], [2002, 2005], [2003]]
    with pytest.raises(GridSearchError):
        inner_folds(cohorts, 6)


def test_single_config_returned_without_search():
    cfg = grid_search(np.zeros((3, 1)), [0, 1, 0], [1, 1, 1], {"n_trees": [7]})
    assert cfg.n_trees == 7


def test_dominant_config_wins():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(240, 3))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    cohorts = np.repeat(np.arange(6), 40)
    res = grid_search(X, y, cohorts, {"max_depth": [0, None]}, seed=1, detail=True)
    assert res.best.max_depth is None
    scores = dict((c.max_depth, s) for c, s in res.scores)
    assert scores[None] > scores[0]


def test_ties_prefer_fewer_trees_then_shallower():
    X = np.repeat(np.array([[0.0], [1.0]]), 60, axis=0)
    y = X[:, 0].astype(int)
    cohorts = np.tile(np.arange(6), 20)
    best = grid_search(X, y, cohorts, {"n_trees": [30, 10], "max_depth": [None, 4]})
    assert (best.n_trees, best.max_depth) == (10, 4)


def test_grid_search_scores_match_direct_fits():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(180, 4))
    y = (X[:, 0] + rng.normal(size=180) > 0).astype(int)
    cohorts = np.repeat(np.arange(6), 30)
    grid = {"n_trees": [5, 15], "max_depth": [None, 2], "min_samples_leaf": [1, 5]}
    res = grid_search(X, y, cohorts, grid, seed=4, detail=True)
    folds = inner_folds(cohorts, 3)
    for cfg, score in res.scores:
        f1s = []
        for val in folds:
            m = fit_forest(X[~val], y[~val], cfg)
            pred = m.predict(X[val]).astype(bool)
            tp = (pred & (y[val] == 1)).sum()
            f1s.append(2 * tp / (pred.sum() + y[val].sum()))
        assert score == pytest.approx(np.mean(f1s), abs=1e-12)


def test_default_grid_selection_reproducible(ds42):
    from dropnet.curricgraph import build_graph, identify_bottlenecks
    from dropnet.featstack import apply_preprocess, assemble, fit_preprocess

    bn = identify_bottlenecks(build_graph(ds42), ds42, vot=3)
    m = assemble(ds42, 3, bottlenecks=bn)
    plan = fit_preprocess(m, None)
    X = apply_preprocess(plan, m)
    a = grid_search(X, m.outcome, m.cohort, seed=0)
    b = grid_search(X, m.outcome, m.cohort, seed=0)
    assert a == b
    assert (a.n_trees, a.max_depth, a.min_samples_leaf) in set(
        product(DEFAULT_GRID["n_trees"], DEFAULT_GRID["max_depth"], DEFAULT_GRID["min_samples_leaf"]))
