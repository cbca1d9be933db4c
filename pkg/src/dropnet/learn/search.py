"""Hyperparameter grid search with cohort-grouped inner folds."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from ..metrics import f1_score
from .forest import ForestConfig, fit_forest

DEFAULT_GRID = {
    "n_trees": (100, 300),
    "max_depth": (None, 8, 16),
    "min_samples_leaf": (1, 5),
}


class GridSearchError(ValueError):
    pass


def expand_grid(grid: Mapping[str, Sequence], base: ForestConfig | None = None) -> list[ForestConfig]:
    """Cartesian product of ``grid`` over ``base`` in key-then-value order."""
    base = base or ForestConfig()
    if not grid:
        return [base]
    keys = list(grid)
    unknown = set(keys) - {"n_trees", "max_depth", "min_samples_leaf"}
    if unknown:
        raise GridSearchError(f"unsupported grid keys: {sorted(unknown)}")
    for k in keys:
        if len(grid[k]) == 0:
            raise GridSearchError(f"grid key {k!r} has no values")
    try:
        return [replace(base, **dict(zip(keys, vals))) for vals in itertools.product(*(grid[k] for k in keys))]
    except (TypeError, ValueError) as exc:
        raise GridSearchError(f"invalid grid value: {exc}") from None


def inner_folds(cohorts, k: int = 3) -> list[np.ndarray]:
    """Validation masks: distinct cohorts, ascending, dealt round-robin into k groups."""
    cohorts = np.asarray(cohorts)
    years = np.unique(cohorts)
    if k < 2:
        raise GridSearchError("inner_k must be >= 2")
    if len(years) < k:
        raise GridSearchError(f"{len(years)} training cohorts cannot form {k} inner folds")
    return [np.isin(cohorts, years[j::k]) for j in range(k)]


def _order_key(cfg: ForestConfig):
    depth = np.inf if cfg.max_depth is None else cfg.max_depth
    return (cfg.n_trees, depth)


@dataclass(frozen=True)
class SearchResult:
    best: ForestConfig
    scores: tuple[tuple[ForestConfig, float], ...]  # (config, mean inner F1), grid order


def grid_search(X, y, cohorts, grid: Mapping[str, Sequence] | None = None, inner_k: int = 3,
                seed: int = 0, base: ForestConfig | None = None, detail: bool = False):
    """Pick the config with the best mean inner-fold F1.

    Ties go to fewer trees, then shallower depth (unlimited is deepest), then
    the earlier grid entry. One unlimited forest with the most trees is grown per
    leaf size and inner fold; smaller configs are scored on its tree prefix and
    depth truncation, which reproduces them exactly.
    """
    base = replace(base or ForestConfig(), seed=seed)
    configs = expand_grid(DEFAULT_GRID if grid is None else grid, base)
    if len(configs) == 1:
        return SearchResult(configs[0], ((configs[0], float("nan")),)) if detail else configs[0]

    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    folds = inner_folds(cohorts, inner_k)
    totals = np.zeros(len(configs))
    by_leaf: dict[int, list[int]] = {}
    for i, cfg in enumerate(configs):
        by_leaf.setdefault(cfg.min_samples_leaf, []).append(i)

    for val in folds:
        tr = ~val
        if len(np.unique(y[tr])) < 2:
            raise GridSearchError("an inner training split holds a single class")
        for leaf, members in by_leaf.items():
            n_max = max(configs[i].n_trees for i in members)
            big = fit_forest(X[tr], y[tr], replace(base, n_trees=n_max, max_depth=None,
                                                   min_samples_leaf=leaf))
            for i in members:
                cfg = configs[i]
                p = big.predict_proba(X[val], n_trees=cfg.n_trees, max_depth=cfg.max_depth)
                totals[i] += f1_score(p >= 0.5, y[val])

    means = totals / len(folds)
    best = min(range(len(configs)), key=lambda i: (-means[i], *_order_key(configs[i]), i))
    if detail:
        return SearchResult(configs[best], tuple((c, float(m)) for c, m in zip(configs, means)))
    return configs[best]
