"""Binned CART decision tree grown level by level from histogram aggregates.

Each level of the tree is grown from one pass over the partitioned data that
counts rows per (node, feature, bin, class).  The counts are exact integers,
so the grown tree does not depend on how the rows were partitioned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from ..dataset import TARGET_COLUMN, FlowTable, n_classes_of, target_of
from ..errors import ConfigError, DataError
from ..partitioned import PartitionedExecutor, histogram_aggregator
from .base import ClassifierModel, register


_GAIN_TOLERANCE = 1e-12


def gini_impurity(class_counts) -> float:
    """``1 - sum(p_i ** 2)`` for a vector of class counts."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("gini impurity is undefined for an empty node")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _gini_rows(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Row-wise gini for a (..., C) count array; empty rows give 0."""
    safe = np.where(totals > 0, totals, 1.0)
    p = counts / safe[..., None]
    return 1.0 - np.sum(p * p, axis=-1)


def compute_bin_boundaries(values, max_bins: int = 32) -> np.ndarray:
    """Split thresholds for one feature.

    With fewer than ``max_bins`` distinct values every midpoint between
    neighbours is a threshold.  Otherwise thresholds sit at the
    ``i / max_bins`` quantiles of the sorted values (midpoint between the two
    straddling values), deduplicated.  A value ``x`` belongs to the left side
    of threshold ``t`` when ``x <= t``.
    """
    if max_bins < 2:
        raise ConfigError(f"max_bins must be at least 2, got {max_bins}")
    v = np.sort(np.asarray(values, dtype=np.float64))
    v = v[~np.isnan(v)]
    distinct = np.unique(v)
    if len(distinct) <= 1:
        return np.zeros(0)
    if len(distinct) <= max_bins:
        return (distinct[:-1] + distinct[1:]) / 2.0
    n = len(v)
    cuts = []
    for i in range(1, max_bins):
        idx = (i * n) // max_bins
        lo, hi = v[idx - 1], v[idx]
        cuts.append((lo + hi) / 2.0 if lo < hi else hi)
    cuts = np.unique(np.asarray(cuts))
    return cuts[cuts < distinct[-1]]


def bin_features(X: np.ndarray, boundaries: Sequence[np.ndarray]) -> np.ndarray:
    """Bin index per cell: number of thresholds strictly below the value."""
    out = np.empty(X.shape, dtype=np.int64)
    for j, b in enumerate(boundaries):
        out[:, j] = np.searchsorted(b, X[:, j], side="left")
    return out


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 5
    max_bins: int = 32
    impurity: str = "gini"
    min_instances_per_node: int = 1
    min_info_gain: float = 0.0

    def __post_init__(self):
        if self.max_depth < 0:
            raise ConfigError("max_depth must be non-negative")
        if self.max_bins < 2:
            raise ConfigError("max_bins must be at least 2")
        if self.impurity != "gini":
            raise ConfigError(f"only gini impurity is supported, got {self.impurity!r}")
        if self.min_instances_per_node < 1:
            raise ConfigError("min_instances_per_node must be positive")
        if self.min_info_gain < 0:
            raise ConfigError("min_info_gain must be non-negative")

    def to_dict(self):
        return {
            "max_depth": self.max_depth,
            "max_bins": self.max_bins,
            "impurity": self.impurity,
            "min_instances_per_node": self.min_instances_per_node,
            "min_info_gain": self.min_info_gain,
        }


@dataclass(frozen=True)
class TreeNode:
    """Leaf when ``feature`` is ``None``; otherwise ``x[feature] <= threshold`` goes left."""

    prediction: int
    histogram: tuple[int, ...]
    feature: int | None = None
    threshold: float = 0.0
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self):
        d = {"prediction": self.prediction, "histogram": list(self.histogram)}
        if not self.is_leaf:
            d.update(feature=self.feature, threshold=self.threshold,
                     left=self.left, right=self.right)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["prediction"]), tuple(int(c) for c in d["histogram"]),
                   d.get("feature"), float(d.get("threshold", 0.0)),
                   int(d.get("left", -1)), int(d.get("right", -1)))


class _TreeArrays:
    def __init__(self, nodes: Sequence[TreeNode]):
        self.feature = np.array([-1 if n.is_leaf else n.feature for n in nodes], dtype=np.int64)
        self.threshold = np.array([n.threshold for n in nodes])
        self.left = np.array([n.left for n in nodes], dtype=np.int64)
        self.right = np.array([n.right for n in nodes], dtype=np.int64)
        self.prediction = np.array([n.prediction for n in nodes], dtype=np.int64)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node


@register("tree")
@dataclass(frozen=True)
class TreeModel(ClassifierModel):
    feature_names: tuple[str, ...]
    n_classes: int
    nodes: tuple[TreeNode, ...]
    boundaries: tuple[tuple[float, ...], ...] = ()
    params: TreeParams = field(default_factory=TreeParams)

    @cached_property
    def _arrays(self) -> _TreeArrays:
        return _TreeArrays(self.nodes)

    @property
    def depth(self) -> int:
        depths = {0: 0}
        for i, n in enumerate(self.nodes):
            if not n.is_leaf:
                depths[n.left] = depths[n.right] = depths[i] + 1
        return max(depths.values())

    def _predict(self, X):
        arr = self._arrays
        return arr.prediction[arr.apply(X)]

    def _payload(self):
        return {
            "nodes": [n.to_dict() for n in self.nodes],
            "boundaries": [list(b) for b in self.boundaries],
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            tuple(obj["feature_names"]),
            int(obj["n_classes"]),
            tuple(TreeNode.from_dict(d) for d in obj["nodes"]),
            tuple(tuple(float(x) for x in b) for b in obj.get("boundaries", ())),
            TreeParams(**obj.get("params", {})),
        )


# growing ----------------------------------------------------------------------------


FeatureSampler = Callable[[int], np.ndarray]


def _level_histogram(executor, data, n_slots, n_features, n_bins, n_classes):
    """Counts indexed [slot, feature (+1 totals block), bin, class]."""
    block = n_features * n_bins + 1
    size = n_slots * block * n_classes

    def index_fn(part):
        slot = part["slot"]
        rows = np.flatnonzero(slot >= 0)
        s = slot[rows]
        y = part["y"][rows]
        base = s * block
        cells = base[:, None] + np.arange(n_features) * n_bins + part["Xb"][rows]
        flat = np.concatenate([cells, (base + n_features * n_bins)[:, None]], axis=1)
        idx = (flat * n_classes + y[:, None]).ravel()
        w = part.get("w")
        weights = None if w is None else np.repeat(w[rows], n_features + 1)
        return idx, weights

    hist = executor.aggregate(data, histogram_aggregator(size, index_fn))
    hist = hist.reshape(n_slots, block, n_classes)
    per_feature = hist[:, :-1, :].reshape(n_slots, n_features, n_bins, n_classes)
    return per_feature, hist[:, -1, :]


def _best_split(hist, counts, n_bins_per_feature, candidates, params):
    """Best (gain, feature, split_bin) for one node, or ``None``.

    ``hist`` is (F, B, C) for the node.  Ties keep the lowest feature index,
    then the lowest bin.
    """
    total = counts.sum()
    parent = _gini_rows(counts[None, :].astype(np.float64), np.array([float(total)]))[0]
    best = None
    for f in candidates:
        nb = n_bins_per_feature[f]
        if nb < 2:
            continue
        left = np.cumsum(hist[f, : nb - 1, :], axis=0)
        right = counts[None, :] - left
        n_left = left.sum(axis=1)
        n_right = right.sum(axis=1)
        valid = (n_left >= params.min_instances_per_node) & (n_right >= params.min_instances_per_node)
        if not valid.any():
            continue
        gain = (parent
                - n_left / total * _gini_rows(left.astype(np.float64), n_left.astype(np.float64))
                - n_right / total * _gini_rows(right.astype(np.float64), n_right.astype(np.float64)))
        gain = np.where(valid, gain, -np.inf)
        t = int(np.argmax(gain))
        if best is None or gain[t] > best[0]:
            best = (float(gain[t]), int(f), t)
    return best


def grow_tree(Xb: np.ndarray, n_bins_per_feature: Sequence[int], y: np.ndarray, n_classes: int,
              params: TreeParams, executor: PartitionedExecutor,
              weights: np.ndarray | None = None,
              feature_sampler: FeatureSampler | None = None) -> list[dict]:
    """Grow one tree on pre-binned data; returns nodes as plain dicts.

    Internal nodes record ``split_bin``; callers translate it to a threshold.
    """
    n, n_features = Xb.shape
    n_bins = max([int(b) for b in n_bins_per_feature] + [1])
    all_features = np.arange(n_features)
    slot = np.zeros(n, dtype=np.int64)
    if weights is not None:
        slot[weights == 0] = -1
    nodes: list[dict] = [{}]
    frontier = [0]  # node id per slot
    for depth in range(params.max_depth + 1):
        if not frontier:
            break
        data = {"Xb": Xb, "y": y, "slot": slot}
        if weights is not None:
            data["w"] = weights
        hist, totals = _level_histogram(executor, data, len(frontier), n_features, n_bins, n_classes)
        split_feature = np.full(len(frontier), -1, dtype=np.int64)
        split_bin = np.zeros(len(frontier), dtype=np.int64)
        child_slots = np.full((len(frontier), 2), -1, dtype=np.int64)
        next_frontier = []
        for s, node_id in enumerate(frontier):
            counts = totals[s]
            node = nodes[node_id]
            node["histogram"] = [int(c) for c in counts]
            node["prediction"] = int(np.argmax(counts))
            size = int(counts.sum())
            pure = int((counts > 0).sum()) <= 1
            if depth == params.max_depth or pure or size < 2 * params.min_instances_per_node:
                continue
            candidates = all_features if feature_sampler is None else feature_sampler(n_features)
            best = _best_split(hist[s], counts, n_bins_per_feature, candidates, params)
            # zero-gain splits are allowed at the default threshold: XOR-like
            # structure only pays off one level further down
            if best is None or best[0] < params.min_info_gain - _GAIN_TOLERANCE:
                continue
            _, f, t = best
            left_id, right_id = len(nodes), len(nodes) + 1
            nodes.extend([{}, {}])
            node.update(feature=f, split_bin=t, left=left_id, right=right_id)
            split_feature[s], split_bin[s] = f, t
            child_slots[s] = (len(next_frontier), len(next_frontier) + 1)
            next_frontier.extend([left_id, right_id])
        rows = np.flatnonzero(slot >= 0)
        cur = slot[rows]
        f = split_feature[cur]
        splitting = f >= 0
        new_slot = np.full(len(rows), -1, dtype=np.int64)
        r, c, fs = rows[splitting], cur[splitting], f[splitting]
        go_left = Xb[r, fs] <= split_bin[c]
        new_slot[splitting] = np.where(go_left, child_slots[c, 0], child_slots[c, 1])
        slot[rows] = new_slot
        frontier = next_frontier
    return nodes


def _to_tree_nodes(raw: list[dict], boundaries) -> tuple[TreeNode, ...]:
    out = []
    for d in raw:
        if "feature" in d:
            thr = float(boundaries[d["feature"]][d["split_bin"]])
            out.append(TreeNode(d["prediction"], tuple(d["histogram"]), d["feature"], thr,
                                d["left"], d["right"]))
        else:
            out.append(TreeNode(d["prediction"], tuple(d["histogram"])))
    return tuple(out)


def prepare_training(table: FlowTable, target: str, features: Sequence[str] | None, max_bins: int):
    if table.row_count == 0:
        raise DataError("cannot train on an empty table")
    features = list(table.feature_names if features is None else features)
    X = table.feature_matrix(features)
    if np.isnan(X).any():
        raise DataError("training features contain missing values; run drop_missing first")
    y = target_of(table, target)
    n_classes = n_classes_of(table, target)
    boundaries = [compute_bin_boundaries(X[:, j], max_bins) for j in range(X.shape[1])]
    Xb = bin_features(X, boundaries)
    return features, X, Xb, y, n_classes, boundaries


def train_decision_tree(table: FlowTable, target: str = TARGET_COLUMN,
                        params: TreeParams = TreeParams(),
                        executor: PartitionedExecutor | None = None,
                        features: Sequence[str] | None = None) -> TreeModel:
    """Greedy top-down gini tree over quantile-binned features."""
    executor = executor or PartitionedExecutor()
    features, _, Xb, y, n_classes, boundaries = prepare_training(table, target, features,
                                                                 params.max_bins)
    raw = grow_tree(Xb, [len(b) + 1 for b in boundaries], y, n_classes, params, executor)
    return TreeModel(tuple(features), n_classes, _to_tree_nodes(raw, boundaries),
                     tuple(tuple(float(x) for x in b) for b in boundaries), params)
