"""Decision tree, random forest and multinomial naive Bayes classifiers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from ..dataset import TARGET_COLUMN, FlowTable
from ..errors import ConfigError
from ..partitioned import PartitionedExecutor
from .base import ClassifierModel, load, loads, model_from_dict, predict
from .forest import ForestModel, ForestParams, train_random_forest
from .naive_bayes import NaiveBayesModel, train_naive_bayes
from .tree import (
    TreeModel,
    TreeNode,
    TreeParams,
    compute_bin_boundaries,
    gini_impurity,
    train_decision_tree,
)

CLASSIFIERS = ("DT", "RF", "NB")

__all__ = [
    "CLASSIFIERS",
    "ClassifierConfig",
    "ClassifierModel",
    "ForestModel",
    "ForestParams",
    "NaiveBayesModel",
    "TreeModel",
    "TreeNode",
    "TreeParams",
    "compute_bin_boundaries",
    "gini_impurity",
    "load",
    "loads",
    "model_from_dict",
    "predict",
    "train_classifier",
    "train_decision_tree",
    "train_naive_bayes",
    "train_random_forest",
]


@dataclass(frozen=True)
class ClassifierConfig:
    """Classifier name (``DT``, ``RF`` or ``NB``) plus hyperparameter overrides."""

    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        name = self.name.upper()
        if name not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {self.name!r}; choose from {CLASSIFIERS}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "params", dict(self.params))

    def resolved(self) -> dict:
        """The full parameter set actually used, defaults included."""
        if self.name == "DT":
            return TreeParams(**self.params).to_dict()
        if self.name == "RF":
            return _forest_params(self.params).to_dict()
        return {"smoothing": float(self.params.get("smoothing", 1.0))}


def _forest_params(params: Mapping[str, Any]) -> ForestParams:
    params = dict(params)
    tree_keys = set(TreeParams.__dataclass_fields__)
    tree = {k: params.pop(k) for k in list(params) if k in tree_keys}
    if tree:
        params["tree"] = TreeParams(**{**params.get("tree", {}), **tree})
    try:
        return ForestParams(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def train_classifier(config: ClassifierConfig, table: FlowTable, features: Sequence[str] | None = None,
                     target: str = TARGET_COLUMN, executor: PartitionedExecutor | None = None,
                     seed: int | None = None) -> ClassifierModel:
    """Dispatch to the trainer named by ``config``.

    ``seed`` overrides the forest seed when the config does not set one.
    """
    try:
        if config.name == "DT":
            tree_params = TreeParams(**config.params)
        elif config.name == "RF":
            params = dict(config.params)
            if seed is not None:
                params.setdefault("seed", seed)
            forest_params = _forest_params(params)
        else:
            smoothing = float(config.params.get("smoothing", 1.0))
    except TypeError as exc:
        raise ConfigError(f"bad {config.name} parameters: {exc}") from None
    if config.name == "DT":
        return train_decision_tree(table, target, tree_params, executor, features)
    if config.name == "RF":
        return train_random_forest(table, target, forest_params, executor, features)
    return train_naive_bayes(table, target, smoothing, features)
