"""Chi-square ranking of features against a categorical target."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import TARGET_COLUMN, FlowTable, target_of
from .errors import ConfigError, DataError

ALL = "all"
DEFAULT_BINS = 32


def parse_k(k) -> int | str:
    """Normalise a feature-count setting: a positive int or :data:`ALL`."""
    if isinstance(k, str):
        if k.strip().lower() == ALL:
            return ALL
        try:
            k = int(k)
        except ValueError:
            raise ConfigError(f"feature count must be a positive integer or 'all', got {k!r}") from None
    if k is None:
        return ALL
    if int(k) < 1:
        raise ConfigError(f"feature count must be positive, got {k}")
    return int(k)


def bin_continuous(values, num_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width bins over [0, 1]: ``floor(v * num_bins)``, with 1.0 in the top bin."""
    if num_bins < 2:
        raise ConfigError(f"num_bins must be at least 2, got {num_bins}")
    v = np.asarray(values, dtype=np.float64)
    if v.size and not (np.all(v >= 0.0) and np.all(v <= 1.0)):
        raise DataError("bin_continuous expects values in [0, 1] (normalise first)")
    return np.minimum(np.floor(v * num_bins).astype(np.int64), num_bins - 1)


@dataclass(frozen=True)
class ContingencyTable:
    observed: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.int64)
        if obs.ndim != 2 or (obs < 0).any():
            raise DataError("contingency table must be a 2-D array of non-negative counts")
        object.__setattr__(self, "observed", obs)

    @classmethod
    def from_columns(cls, feature, target) -> "ContingencyTable":
        feature, target = np.asarray(feature), np.asarray(target)
        if len(feature) != len(target):
            raise DataError(f"feature and target lengths differ ({len(feature)} vs {len(target)})")
        _, rows = np.unique(feature, return_inverse=True)
        _, cols = np.unique(target, return_inverse=True)
        r = int(rows.max()) + 1 if len(rows) else 0
        c = int(cols.max()) + 1 if len(cols) else 0
        flat = np.bincount(rows.ravel() * c + cols.ravel(), minlength=r * c)
        return cls(flat.reshape(r, c))

    @property
    def row_totals(self) -> np.ndarray:
        return self.observed.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.observed.sum(axis=0)

    @property
    def grand_total(self) -> int:
        return int(self.observed.sum())

    def expected(self) -> np.ndarray:
        n = self.grand_total
        if n == 0:
            return np.zeros(self.observed.shape)
        return np.outer(self.row_totals, self.col_totals) / n

    def statistic(self) -> tuple[float, int]:
        """Pearson statistic over cells with non-zero expectation, and its dof."""
        obs = self.observed.astype(np.float64)
        exp = self.expected()
        cells = exp > 0
        stat = float(np.sum((obs[cells] - exp[cells]) ** 2 / exp[cells]))
        r = int((self.row_totals > 0).sum())
        c = int((self.col_totals > 0).sum())
        return stat, max(r - 1, 0) * max(c - 1, 0)


def chi_square_statistic(feature, target) -> tuple[float, int]:
    """Chi-square independence statistic between two discrete columns."""
    feature, target = np.asarray(feature), np.asarray(target)
    if len(feature) != len(target):
        raise DataError(f"feature and target lengths differ ({len(feature)} vs {len(target)})")
    if len(feature) == 0:
        raise DataError("chi-square needs at least one row")
    return ContingencyTable.from_columns(feature, target).statistic()


@dataclass(frozen=True)
class FeatureScore:
    feature: str
    chi2: float
    dof: int

    def to_dict(self):
        return {"feature": self.feature, "chi2": self.chi2, "dof": self.dof}


@dataclass(frozen=True)
class ChiSqRanking:
    """Features ordered by statistic (descending), ties by name (ascending)."""

    scores: tuple[FeatureScore, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.scores, key=lambda s: (-s.chi2, s.feature)))
        object.__setattr__(self, "scores", ordered)

    @property
    def names(self) -> list[str]:
        return [s.feature for s in self.scores]

    def top(self, k) -> list[str]:
        k = parse_k(k)
        if k == ALL:
            return self.names
        if k > len(self.scores):
            raise ConfigError(f"asked for top {k} features but only {len(self.scores)} are candidates")
        return self.names[:k]

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.scores]

    def to_json(self) -> str:
        return json.dumps(self.to_list(), indent=2)

    @classmethod
    def from_list(cls, items) -> "ChiSqRanking":
        return cls(tuple(FeatureScore(d["feature"], float(d["chi2"]), int(d["dof"])) for d in items))


def rank_features(table: FlowTable, target: str = TARGET_COLUMN,
                  features: Sequence[str] | None = None, num_bins: int = DEFAULT_BINS,
                  workers: int = 1) -> ChiSqRanking:
    """Score every candidate feature; values must already lie in [0, 1]."""
    y = target_of(table, target)
    names = list(table.feature_names if features is None else features)
    if table.row_count == 0:
        raise DataError("cannot rank features on an empty table")

    def score(name):
        binned = bin_continuous(table.column(name), num_bins)
        stat, dof = chi_square_statistic(binned, y)
        return FeatureScore(name, stat, dof)

    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, names))
    else:
        scores = [score(n) for n in names]
    return ChiSqRanking(tuple(scores))


def select_top_k(table: FlowTable, target: str = TARGET_COLUMN, k=ALL,
                 num_bins: int = DEFAULT_BINS, workers: int = 1):
    """Return ``(ranking, selected_names)``; ``k`` exceeding the candidates is an error."""
    k = parse_k(k)
    ranking = rank_features(table, target, num_bins=num_bins, workers=workers)
    return ranking, ranking.top(k)
