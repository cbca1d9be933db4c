from .forest import ForestConfig, ForestModel, Tree, balanced_class_weights, bootstrap_counts, fit_forest, fit_tree
from .logit import LogitModel, fit_logit, logit_objective
from .search import DEFAULT_GRID, GridSearchError, SearchResult, expand_grid, grid_search, inner_folds

__all__ = [
    "DEFAULT_GRID", "ForestConfig", "ForestModel", "GridSearchError", "LogitModel", "SearchResult",
    "Tree", "balanced_class_weights", "bootstrap_counts", "expand_grid", "fit_forest", "fit_logit",
    "fit_tree", "grid_search", "inner_folds", "logit_objective",
]
