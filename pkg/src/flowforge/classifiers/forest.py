"""Random forest: bootstrapped binned trees with per-node feature subsets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..dataset import TARGET_COLUMN, FlowTable
from ..errors import ConfigError
from ..partitioned import PartitionedExecutor
from .base import ClassifierModel, register
from .tree import TreeModel, TreeParams, _to_tree_nodes, grow_tree, prepare_training

SUBSET_RULES = ("sqrt", "all", "log2", "onethird")


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 20
    feature_subset: str | int = "sqrt"
    bootstrap: bool = True
    tree: TreeParams = field(default_factory=TreeParams)
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ConfigError("num_trees must be at least 1")
        if isinstance(self.feature_subset, str):
            if self.feature_subset not in SUBSET_RULES:
                raise ConfigError(f"feature_subset must be one of {SUBSET_RULES} or an int")
        elif int(self.feature_subset) < 1:
            raise ConfigError("feature_subset must be positive")
        if isinstance(self.tree, dict):
            object.__setattr__(self, "tree", TreeParams(**self.tree))

    def subset_size(self, n_features: int) -> int:
        rule = self.feature_subset
        if rule == "all":
            k = n_features
        elif rule == "sqrt":
            k = math.ceil(math.sqrt(n_features))
        elif rule == "log2":
            k = math.ceil(math.log2(n_features)) if n_features > 1 else 1
        elif rule == "onethird":
            k = math.ceil(n_features / 3)
        else:
            k = int(rule)
        return max(1, min(k, n_features))

    def to_dict(self):
        return {
            "num_trees": self.num_trees,
            "feature_subset": self.feature_subset,
            "bootstrap": self.bootstrap,
            "tree": self.tree.to_dict(),
            "seed": self.seed,
        }


@register("forest")
@dataclass(frozen=True)
class ForestModel(ClassifierModel):
    feature_names: tuple[str, ...]
    n_classes: int
    trees: tuple[TreeModel, ...]
    params: ForestParams = field(default_factory=ForestParams)

    def votes(self, X) -> np.ndarray:
        X = self._check(X)
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            votes[rows, tree._predict(X)] += 1
        return votes

    def _predict(self, X):
        # argmax keeps the lowest class index on tied votes
        return np.argmax(self.votes(X), axis=1)

    def _payload(self):
        return {
            "trees": [{"nodes": [n.to_dict() for n in t.nodes]} for t in self.trees],
            "boundaries": [list(b) for b in (self.trees[0].boundaries if self.trees else ())],
            "params": self.params.to_dict(),
            "seed": self.params.seed,
        }

    @classmethod
    def from_dict(cls, obj):
        params = ForestParams(**obj["params"])
        names = tuple(obj["feature_names"])
        boundaries = tuple(tuple(float(x) for x in b) for b in obj.get("boundaries", ()))
        trees = tuple(
            TreeModel.from_dict({"feature_names": names, "n_classes": obj["n_classes"],
                                 "nodes": t["nodes"], "boundaries": boundaries,
                                 "params": params.tree.to_dict()})
            for t in obj["trees"]
        )
        return cls(names, int(obj["n_classes"]), trees, params)


def train_random_forest(table: FlowTable, target: str = TARGET_COLUMN,
                        params: ForestParams = ForestParams(),
                        executor: PartitionedExecutor | None = None,
                        features: Sequence[str] | None = None) -> ForestModel:
    """Train ``num_trees`` trees; tree ``t`` draws from PCG64 seeded by ``(seed, t)``."""
    executor = executor or PartitionedExecutor()
    features, _, Xb, y, n_classes, boundaries = prepare_training(table, target, features,
                                                                 params.tree.max_bins)
    n, n_features = Xb.shape
    n_bins = [len(b) + 1 for b in boundaries]
    subset = params.subset_size(n_features) if n_features else 0
    frozen_bounds = tuple(tuple(float(x) for x in b) for b in boundaries)
    trees = []
    for t in range(params.num_trees):
        rng = np.random.Generator(np.random.PCG64([params.seed, t]))
        weights = None
        if params.bootstrap:
            weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.int64)

        sampler = None
        if subset < n_features:
            def sampler(d, rng=rng):
                return np.sort(rng.choice(d, size=subset, replace=False))

        raw = grow_tree(Xb, n_bins, y, n_classes, params.tree, executor, weights, sampler)
        trees.append(TreeModel(tuple(features), n_classes, _to_tree_nodes(raw, boundaries),
                               frozen_bounds, params.tree))
    return ForestModel(tuple(features), n_classes, tuple(trees), params)
