"""CART trees and bagged random forests with weighted Gini splits.

Every node draws its candidate columns from a private random stream whose
seed is derived from the tree seed and the node's path from the root. Two
consequences are relied on elsewhere: a depth-limited tree is exactly the
truncation of the unlimited tree grown from the same seed, and tree ``t`` of
a forest depends only on ``(seed, t)``, so a forest's first ``k`` trees are
the ``k``-tree forest.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; workqueue is always available
    numba.config.THREADING_LAYER = "workqueue"

MODEL_FORMAT = "dropnet.forest/1"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True)
def _mix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True)
def _child_seed(seed, side):
    return _mix(seed ^ (np.uint64(side + 1) * _M2))


@numba.njit(cache=True)
def _grow_tree(X, y, counts, sw, rows, max_depth, min_leaf, m_try, seed,
               feat, thr, left, right, value, depth, imp):
    """Grow one tree depth-first over ``rows`` (reordered in place).

    Returns the number of nodes written. ``imp`` accumulates the weighted
    impurity decrease per column (not yet normalised).
    """
    n_features = X.shape[1]
    n = rows.shape[0]
    cap = feat.shape[0]
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    st_seed = np.empty(cap, np.uint64)
    perm = np.empty(n_features, np.int64)
    vals = np.empty(n, np.float64)
    buf = np.empty(n, np.int64)

    root_w = 0.0
    for i in range(n):
        root_w += sw[rows[i]]

    top = 0
    st_start[0] = 0
    st_end[0] = n
    st_node[0] = 0
    st_seed[0] = seed
    depth[0] = 0
    n_nodes = 1
    while top >= 0:
        start = st_start[top]
        end = st_end[top]
        node = st_node[top]
        nseed = st_seed[top]
        top -= 1

        w0 = 0.0
        w1 = 0.0
        cnt = 0
        for i in range(start, end):
            r = rows[i]
            if y[r] == 1:
                w1 += sw[r]
            else:
                w0 += sw[r]
            cnt += counts[r]
        wt = w0 + w1
        value[node] = w1 / wt if wt > 0 else 0.0
        feat[node] = -1
        left[node] = -1
        right[node] = -1
        if w0 <= 0.0 or w1 <= 0.0 or cnt < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth[node] >= max_depth:
            continue

        parent_term = (w0 * w0 + w1 * w1) / wt
        best_gain = -1.0
        best_f = -1
        best_t = 0.0
        tol = 1e-12 * wt

        # random column order for this node; constant columns are skipped
        # without using up one of the m_try draws
        for j in range(n_features):
            perm[j] = j
        state = nseed
        for j in range(n_features - 1, 0, -1):
            state = _mix(state)
            k = np.int64(state % np.uint64(j + 1))
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp

        m = end - start
        visited = 0
        for jj in range(n_features):
            if visited >= m_try:
                break
            f = perm[jj]
            lo = np.inf
            hi = -np.inf
            for i in range(m):
                v = X[rows[start + i], f]
                vals[i] = v
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if lo == hi:
                continue
            visited += 1
            # two-valued columns (one-hot, flags) have a single candidate cut
            l0 = 0.0
            l1 = 0.0
            lc = 0
            binary = True
            for i in range(m):
                v = vals[i]
                if v == lo:
                    r = rows[start + i]
                    if y[r] == 1:
                        l1 += sw[r]
                    else:
                        l0 += sw[r]
                    lc += counts[r]
                elif v != hi:
                    binary = False
                    break
            if binary:
                if lc < min_leaf or cnt - lc < min_leaf:
                    continue
                wl = l0 + l1
                r0 = w0 - l0
                r1 = w1 - l1
                wr = r0 + r1
                if wl <= 0.0 or wr <= 0.0:
                    continue
                gain = (l0 * l0 + l1 * l1) / wl + (r0 * r0 + r1 * r1) / wr - parent_term
                t = 0.5 * (lo + hi)
                if t >= hi:
                    t = lo
                if gain > best_gain + tol:
                    best_gain = gain
                    best_f = f
                    best_t = t
                elif gain >= best_gain - tol and best_f >= 0:
                    if f < best_f or (f == best_f and t < best_t):
                        best_gain = max(gain, best_gain)
                        best_f = f
                        best_t = t
                continue
            order = np.argsort(vals[:m], kind="mergesort")
            l0 = 0.0
            l1 = 0.0
            lc = 0
            for i in range(m - 1):
                r = rows[start + order[i]]
                if y[r] == 1:
                    l1 += sw[r]
                else:
                    l0 += sw[r]
                lc += counts[r]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a == b:
                    continue
                if lc < min_leaf or cnt - lc < min_leaf:
                    continue
                wl = l0 + l1
                r0 = w0 - l0
                r1 = w1 - l1
                wr = r0 + r1
                if wl <= 0.0 or wr <= 0.0:
                    continue
                gain = (l0 * l0 + l1 * l1) / wl + (r0 * r0 + r1 * r1) / wr - parent_term
                t = 0.5 * (a + b)
                if t >= b:
                    t = a
                if gain > best_gain + tol:
                    best_gain = gain
                    best_f = f
                    best_t = t
                elif gain >= best_gain - tol and best_f >= 0:
                    if f < best_f or (f == best_f and t < best_t):
                        best_gain = max(gain, best_gain)
                        best_f = f
                        best_t = t

        if best_f < 0 or best_gain <= tol:
            continue

        # stable partition: x <= threshold goes left
        nl = 0
        for i in range(start, end):
            if X[rows[i], best_f] <= best_t:
                nl += 1
        li = 0
        ri = nl
        for i in range(start, end):
            r = rows[i]
            if X[r, best_f] <= best_t:
                buf[li] = r
                li += 1
            else:
                buf[ri] = r
                ri += 1
        for i in range(m):
            rows[start + i] = buf[i]

        feat[node] = best_f
        thr[node] = best_t
        imp[best_f] += best_gain
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        depth[lid] = depth[node] + 1
        depth[rid] = depth[node] + 1
        # right pushed first so the left subtree is expanded first
        top += 1
        st_start[top] = start + nl
        st_end[top] = end
        st_node[top] = rid
        st_seed[top] = _child_seed(nseed, 1)
        top += 1
        st_start[top] = start
        st_end[top] = start + nl
        st_node[top] = lid
        st_seed[top] = _child_seed(nseed, 0)
    for f in range(n_features):
        imp[f] /= root_w
    return n_nodes


@numba.njit(cache=True, parallel=True)
def _grow_forest(X, y, counts, class_w, seeds, max_depth, min_leaf, m_try,
                 feat, thr, left, right, value, depth, imp, n_nodes):
    # trees are independent: each writes only its own row of the outputs
    n_trees = counts.shape[0]
    n = X.shape[0]
    for t in numba.prange(n_trees):
        rows_all = np.empty(n, np.int64)
        k = 0
        for i in range(n):
            if counts[t, i] > 0:
                rows_all[k] = i
                k += 1
        rows = rows_all[:k]
        sw = np.empty(n, np.float64)
        for i in range(n):
            sw[i] = counts[t, i] * class_w[y[i]]
        n_nodes[t] = _grow_tree(X, y, counts[t], sw, rows, max_depth, min_leaf, m_try, seeds[t],
                                feat[t], thr[t], left[t], right[t], value[t], depth[t], imp[t])


@numba.njit(cache=True)
def _predict(X, feat, thr, left, right, value, depth, n_trees, max_depth):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        s = 0.0
        for t in range(n_trees):
            node = 0
            while left[t, node] >= 0 and (max_depth < 0 or depth[t, node] < max_depth):
                if X[i, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            s += value[t, node]
        out[i] = s / n_trees
    return out


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: str | int | None = "sqrt"
    class_weight: str = "balanced"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.class_weight not in ("balanced", "none"):
            raise ValueError("class_weight must be 'balanced' or 'none'")

    def features_per_split(self, d: int) -> int:
        rule = self.max_features
        if rule is None or rule == "all":
            return d
        if rule == "sqrt":
            return max(1, int(math.isqrt(d)))
        if isinstance(rule, int) and rule >= 1:
            return min(d, rule)
        raise ValueError(f"bad max_features {rule!r}")


def balanced_class_weights(y: np.ndarray) -> np.ndarray:
    """w_c = n / (2 n_c)."""
    n = len(y)
    n1 = int(np.sum(y == 1))
    n0 = n - n1
    return np.array([n / (2.0 * n0) if n0 else 0.0, n / (2.0 * n1) if n1 else 0.0])


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if y.shape != (X.shape[0],):
        raise ValueError("y does not match X")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary 0/1")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X, y


def bootstrap_counts(n: int, seed: int, tree_index: int) -> tuple[np.ndarray, np.uint64]:
    """Draw counts (n draws with replacement) and the node-stream seed of one tree."""
    rng = np.random.default_rng([int(seed), int(tree_index)])
    draws = rng.integers(0, n, size=n)
    tree_seed = np.uint64(rng.integers(0, 2**63, dtype=np.int64))
    return np.bincount(draws, minlength=n).astype(np.int64), tree_seed


@dataclass(eq=False)
class ForestModel:
    config: ForestConfig
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_nodes: np.ndarray
    feature_importances: np.ndarray
    tree_importances: np.ndarray

    @property
    def n_trees(self) -> int:
        return int(self.feature.shape[0])

    def predict_proba(self, X, n_trees: int | None = None, max_depth: int | None = None) -> np.ndarray:
        """Mean leaf dropout frequency over the first ``n_trees`` trees.

        ``max_depth`` evaluates the trees truncated at that depth, which is the
        same as having grown them with that limit.
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns")
        k = self.n_trees if n_trees is None else int(n_trees)
        if not 1 <= k <= self.n_trees:
            raise ValueError("n_trees out of range")
        md = -1 if max_depth is None else int(max_depth)
        return _predict(X, self.feature, self.threshold, self.left, self.right, self.value,
                        self.depth, k, md)

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)

    def to_dict(self) -> dict:
        trees = []
        for t in range(self.n_trees):
            k = int(self.n_nodes[t])
            trees.append({
                "feature": self.feature[t, :k].tolist(),
                "threshold": self.threshold[t, :k].tolist(),
                "left": self.left[t, :k].tolist(),
                "right": self.right[t, :k].tolist(),
                "value": self.value[t, :k].tolist(),
            })
        return {
            "format": MODEL_FORMAT,
            "config": asdict(self.config),
            "n_features": self.n_features,
            "feature_importances": self.feature_importances.tolist(),
            "trees": trees,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, doc: dict) -> ForestModel:
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        trees = doc["trees"]
        width = max(len(t["feature"]) for t in trees)
        n_trees = len(trees)
        feature = np.full((n_trees, width), -1, np.int64)
        threshold = np.zeros((n_trees, width))
        left = np.full((n_trees, width), -1, np.int64)
        right = np.full((n_trees, width), -1, np.int64)
        value = np.zeros((n_trees, width))
        depth = np.zeros((n_trees, width), np.int64)
        n_nodes = np.zeros(n_trees, np.int64)
        for t, tree in enumerate(trees):
            k = len(tree["feature"])
            n_nodes[t] = k
            feature[t, :k] = tree["feature"]
            threshold[t, :k] = tree["threshold"]
            left[t, :k] = tree["left"]
            right[t, :k] = tree["right"]
            value[t, :k] = tree["value"]
            for node in range(k):  # children always follow their parent
                for child in (left[t, node], right[t, node]):
                    if child >= 0:
                        depth[t, child] = depth[t, node] + 1
        n_features = int(doc["n_features"])
        return cls(ForestConfig(**doc["config"]), n_features, feature, threshold, left, right, value,
                   depth, n_nodes, np.asarray(doc["feature_importances"], dtype=float),
                   np.zeros((n_trees, n_features)))

    @classmethod
    def from_json(cls, text: str) -> ForestModel:
        return cls.from_dict(json.loads(text))


def _normalised_importances(per_tree: np.ndarray) -> np.ndarray:
    sums = per_tree.sum(axis=1, keepdims=True)
    scaled = np.divide(per_tree, sums, out=np.zeros_like(per_tree), where=sums > 0)
    mean = scaled.mean(axis=0)
    total = mean.sum()
    return mean / total if total > 0 else mean


def _grow(X, y, counts, class_w, seeds, config, m_try) -> ForestModel:
    n_trees, n = counts.shape
    n_unique = int((counts > 0).sum(axis=1).max())
    cap = max(1, 2 * n_unique - 1)
    d = X.shape[1]
    feature = np.full((n_trees, cap), -1, np.int64)
    threshold = np.zeros((n_trees, cap))
    left = np.full((n_trees, cap), -1, np.int64)
    right = np.full((n_trees, cap), -1, np.int64)
    value = np.zeros((n_trees, cap))
    depth = np.zeros((n_trees, cap), np.int64)
    imp = np.zeros((n_trees, d))
    n_nodes = np.zeros(n_trees, np.int64)
    max_depth = -1 if config.max_depth is None else int(config.max_depth)
    _grow_forest(X, y, counts, class_w, seeds, max_depth, int(config.min_samples_leaf), m_try,
                 feature, threshold, left, right, value, depth, imp, n_nodes)
    width = int(n_nodes.max())
    return ForestModel(config, d, feature[:, :width].copy(), threshold[:, :width].copy(),
                       left[:, :width].copy(), right[:, :width].copy(), value[:, :width].copy(),
                       depth[:, :width].copy(), n_nodes, _normalised_importances(imp), imp)


def fit_forest(X, y, config: ForestConfig | None = None) -> ForestModel:
    """Bagged Gini trees on seeded bootstraps with optional balanced class weights."""
    config = config or ForestConfig()
    X, y = _check_xy(X, y)
    if X.shape[0] < 2 or len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    n = X.shape[0]
    class_w = balanced_class_weights(y) if config.class_weight == "balanced" else np.ones(2)
    counts = np.empty((config.n_trees, n), np.int64)
    seeds = np.empty(config.n_trees, np.uint64)
    for t in range(config.n_trees):
        counts[t], seeds[t] = bootstrap_counts(n, config.seed, t)
    return _grow(X, y, counts, class_w, seeds, config, config.features_per_split(X.shape[1]))


@dataclass(eq=False)
class Tree:
    """A single fitted tree (node arrays plus normalised importances)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    feature_importances: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict(X, self.feature[None], self.threshold[None], self.left[None],
                        self.right[None], self.value[None], self.depth[None], 1, -1)


def fit_tree(X, y, weights=None, config: ForestConfig | None = None, seed: int = 0) -> Tree:
    """One CART tree on all rows (no bootstrap).

    ``weights`` are per-row impurity weights (default 1); ``min_samples_leaf``
    counts rows. Ties between equally good splits go to the lowest column,
    then the lowest threshold.
    """
    config = config or ForestConfig(max_features=None)
    X, y = _check_xy(X, y)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per row")
    counts = np.ones((1, n), np.int64)
    rows = np.arange(n, dtype=np.int64)
    cap = max(1, 2 * n - 1)
    d = X.shape[1]
    arrays = dict(
        feat=np.full(cap, -1, np.int64), thr=np.zeros(cap), left=np.full(cap, -1, np.int64),
        right=np.full(cap, -1, np.int64), value=np.zeros(cap), depth=np.zeros(cap, np.int64),
    )
    imp = np.zeros(d)
    max_depth = -1 if config.max_depth is None else int(config.max_depth)
    k = _grow_tree(X, y, counts[0], w, rows, max_depth, int(config.min_samples_leaf),
                   config.features_per_split(d), np.uint64(_seed64(seed)), arrays["feat"],
                   arrays["thr"], arrays["left"], arrays["right"], arrays["value"], arrays["depth"],
                   imp)
    total = imp.sum()
    return Tree(arrays["feat"][:k].copy(), arrays["thr"][:k].copy(), arrays["left"][:k].copy(),
                arrays["right"][:k].copy(), arrays["value"][:k].copy(), arrays["depth"][:k].copy(),
                imp / total if total > 0 else imp)


def _seed64(seed: int) -> int:
    return int(np.random.SeedSequence(int(seed)).generate_state(1, np.uint64)[0])
