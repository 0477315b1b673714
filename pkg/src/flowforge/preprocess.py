"""Cleaning, sampling, scaling and splitting of flow tables.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` so a run is
reproducible from its seed alone.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import (
    CATEGORICAL,
    EXCLUDED,
    LABEL_CATEGORY,
    LABEL_SUBCATEGORY,
    MISSING_CODE,
    TARGET_COLUMN,
    FlowTable,
    frequency_order,
    missing_mask,
    subcategory_name,
    target_of,
)
from .errors import ConfigError, DataError, SchemaError

log = logging.getLogger(__name__)

# The six string-valued columns of the BoT-IoT flow records.
DEFAULT_STRING_COLUMNS = ("proto", "flgs", "state", "sport", "dport", "label")
DEFAULT_TRAIN_FRACTION = 0.7
DEFAULT_FOLDS = 10
# Attack + normal rows of the undersampled partial dataset (29,507 + 2,761).
PARTIAL_DATASET_ROWS = 32268


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# string indexing -------------------------------------------------------------


@dataclass(frozen=True)
class IndexMap:
    """Dense string -> code map; code 0 is the most frequent string."""

    column: str
    mapping: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "mapping", dict(self.mapping))
        if sorted(self.mapping.values()) != list(range(len(self.mapping))):
            raise DataError(f"index map for {self.column!r} is not a bijection onto 0..n-1")

    @property
    def labels(self) -> list[str]:
        return sorted(self.mapping, key=self.mapping.__getitem__)

    def encode(self, values) -> np.ndarray:
        """Encode strings; missing (``None``) or unseen values become ``MISSING_CODE``."""
        get = self.mapping.get
        return np.fromiter(
            (MISSING_CODE if v is None else get(v, MISSING_CODE) for v in values),
            dtype=np.int64,
            count=len(values),
        )

    def decode(self, codes) -> list[str | None]:
        labels = self.labels
        return [None if c < 0 else labels[c] for c in codes]

    def to_dict(self):
        return {"column": self.column, "labels": self.labels}

    @classmethod
    def from_dict(cls, obj) -> "IndexMap":
        return cls(obj["column"], {s: i for i, s in enumerate(obj["labels"])})


def index_strings(table: FlowTable, columns: Sequence[str] | None = None):
    """Replace string columns by integer codes.

    ``columns`` defaults to every categorical column still holding strings.
    Codes follow descending frequency with lexicographic tie-break, so the
    result depends only on the column contents.
    """
    if columns is None:
        columns = [n for n in table.columns_of_kind(CATEGORICAL) if table.column(n).dtype == object]
    updates, maps = {}, []
    for name in columns:
        values = table.column(name)
        if values.dtype != object:
            raise SchemaError(f"column {name!r} does not hold strings", [name])
        present = [v for v in values if v is not None]
        imap = IndexMap(name, {s: i for i, s in enumerate(frequency_order(present))})
        updates[name] = imap.encode(values)
        maps.append(imap)
    return table.with_columns(updates), maps


# duplicates and missing values ----------------------------------------------


def _row_key_matrix(table: FlowTable, names: Sequence[str]) -> np.ndarray:
    """Integer matrix whose rows are equal iff the table rows are equal."""
    parts = []
    for name in names:
        values = table.column(name)
        if values.dtype.kind == "f":
            clean = np.where(np.isnan(values), np.nan, values + 0.0)
            parts.append(clean.astype(np.float64).view(np.int64))
        elif values.dtype.kind in "iub":
            parts.append(values.astype(np.int64))
        else:
            codes: dict = {}
            parts.append(np.fromiter((codes.setdefault(v, len(codes)) for v in values),
                                     dtype=np.int64, count=len(values)))
    if not parts:
        return np.zeros((table.row_count, 0), dtype=np.int64)
    return np.column_stack(parts)


def drop_duplicates(table: FlowTable):
    """Keep the first occurrence of each distinct row (excluded columns ignored).

    Returns ``(table, removed_count)``.
    """
    n = table.row_count
    if n == 0:
        return table, 0
    names = [c.name for c in table.schema if c.kind != EXCLUDED]
    keys = _row_key_matrix(table, names)
    if keys.shape[1] == 0:
        keep = np.array([0])
    else:
        _, first = np.unique(keys, axis=0, return_index=True)
        keep = np.sort(first)
    removed = n - len(keep)
    if removed == 0:
        return table, 0
    return table.take(keep), int(removed)


def row_class_names(table: FlowTable) -> list[str]:
    """Reporting key per row: concatenated subcategory name where available."""
    cat_col = table.label_column(LABEL_CATEGORY)
    sub_col = table.label_column(LABEL_SUBCATEGORY)
    if cat_col and sub_col:
        out = []
        for c, s in zip(table.column(cat_col), table.column(sub_col)):
            if c is None or s is None:
                out.append("unlabeled")
            else:
                out.append(subcategory_name(str(c), str(s)))
        return out
    if TARGET_COLUMN in table.columns and table.target_names:
        return [table.target_names[i] for i in table.column(TARGET_COLUMN)]
    return ["unlabeled"] * table.row_count


def drop_missing(table: FlowTable):
    """Delete every row holding a missing marker in a non-excluded column.

    Returns ``(table, report)`` where ``report`` maps the class of each
    dropped row (see :func:`row_class_names`) to its count.
    """
    n = table.row_count
    bad = np.zeros(n, dtype=bool)
    for col in table.schema:
        if col.kind != EXCLUDED:
            bad |= missing_mask(table.column(col.name))
    if not bad.any():
        return table, {}
    names = row_class_names(table.take(bad))
    report: dict[str, int] = {}
    for name in names:
        report[name] = report.get(name, 0) + 1
    report = dict(sorted(report.items()))
    if bad.all():
        warnings.warn(f"every one of the {n} rows has a missing value; result is empty",
                      RuntimeWarning, stacklevel=2)
    return table.take(~bad), report


# normalisation ----------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationParams:
    ranges: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in self.ranges.items()}
        for name, (lo, hi) in ranges.items():
            if not lo <= hi:
                raise DataError(f"normalisation range for {name!r} has min > max")
        object.__setattr__(self, "ranges", ranges)

    def to_dict(self):
        return {k: [lo, hi] for k, (lo, hi) in self.ranges.items()}

    @classmethod
    def from_dict(cls, obj) -> "NormalizationParams":
        return cls({k: tuple(v) for k, v in obj.items()})


def _scale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        out = np.zeros(len(values))
        out[np.isnan(values)] = np.nan
        return out
    return (values - lo) / (hi - lo)


def min_max_normalize(table: FlowTable, columns: Sequence[str] | None = None,
                      params: NormalizationParams | None = None):
    """Scale columns into [0, 1].

    Without ``params`` the ranges are fitted on ``table``.  With ``params``
    (the test-set case) the stored ranges are applied and results clamped to
    [0, 1].  Constant columns map to 0.  Missing values stay missing.
    """
    if columns is None:
        columns = list(params.ranges) if params is not None else table.feature_names
    updates, fitted = {}, {}
    for name in columns:
        raw = table.column(name)
        if raw.dtype == object:
            raise DataError(f"column {name!r} must be indexed before normalisation")
        values = raw.astype(np.float64)
        if raw.dtype.kind == "i":
            values[raw < 0] = np.nan
        if params is None:
            finite = values[~np.isnan(values)]
            lo, hi = (float(finite.min()), float(finite.max())) if len(finite) else (0.0, 0.0)
            fitted[name] = (lo, hi)
            updates[name] = _scale(values, lo, hi)
        else:
            try:
                lo, hi = params.ranges[name]
            except KeyError:
                raise SchemaError(f"no normalisation range stored for {name!r}", [name]) from None
            updates[name] = np.clip(_scale(values, lo, hi), 0.0, 1.0)
    out = table.with_columns(updates)
    return out, (params if params is not None else NormalizationParams(fitted))


# sampling ---------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingPlan:
    """Per-class keep ratios plus the seed that picks the kept rows."""

    ratios: Mapping[str, float]
    seed: int = 0

    def __post_init__(self):
        ratios = {str(k): float(v) for k, v in self.ratios.items()}
        for name, r in ratios.items():
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"keep ratio for {name!r} must be in (0, 1], got {r}")
        object.__setattr__(self, "ratios", dict(sorted(ratios.items())))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self):
        return {"ratios": dict(self.ratios), "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj) -> "SamplingPlan":
        return cls(obj["ratios"], obj.get("seed", 0))


def cap_for_total(counts: Mapping[str, int], total: int) -> int:
    """Per-class cap whose capped total lies closest to ``total`` (smaller cap on ties)."""
    def capped(cap):
        return sum(min(n, cap) for n in counts.values())

    lo, hi = 0, max(counts.values(), default=0)
    while lo < hi:  # largest cap with capped(cap) <= total
        mid = (lo + hi + 1) // 2
        if capped(mid) <= total:
            lo = mid
        else:
            hi = mid - 1
    if lo < max(counts.values(), default=0) and abs(capped(lo + 1) - total) < abs(capped(lo) - total):
        return lo + 1
    return lo


def default_plan(counts: Mapping[str, int], total: int = PARTIAL_DATASET_ROWS,
                 seed: int = 0) -> SamplingPlan:
    """Cap every class at a common size so the kept rows total about ``total``."""
    counts = {k: int(v) for k, v in counts.items() if v > 0}
    cap = cap_for_total(counts, total)
    ratios = {k: 1.0 if n <= cap else max(cap, 1) / n for k, n in counts.items()}
    return SamplingPlan(ratios, seed)


def _class_keys(table: FlowTable, by: str | None) -> np.ndarray:
    if by is None:
        y = target_of(table)
        if not table.target_names:
            return y.astype(str)
        return np.asarray(table.target_names, dtype=object)[y]
    values = table.column(by)
    return np.asarray([str(v) for v in values], dtype=object)


def undersample(table: FlowTable, plan: SamplingPlan, by: str | None = None,
                keys: Sequence[str] | None = None) -> FlowTable:
    """Keep ``round(ratio * n_c)`` uniformly chosen rows of each class ``c``.

    Classes are keyed by target class name, by the string values of column
    ``by``, or by an explicit per-row ``keys`` sequence.  Surviving rows keep
    their original relative order.
    """
    if keys is None:
        keys = _class_keys(table, by)
    else:
        keys = np.asarray(keys, dtype=object)
        if len(keys) != table.row_count:
            raise DataError("one sampling key per row is required")
    present = sorted(set(keys.tolist()))
    absent = [k for k in present if k not in plan.ratios]
    if absent:
        raise ConfigError(f"sampling plan has no ratio for classes {absent}")
    rng = rng_for(plan.seed)
    keep = []
    for name in present:
        idx = np.flatnonzero(keys == name)
        k = round_half_up(plan.ratios[name] * len(idx))
        if k >= len(idx):
            keep.append(idx)
        else:
            keep.append(rng.choice(idx, size=k, replace=False))
    if not keep:
        return table
    return table.take(np.sort(np.concatenate(keep)))


def sampling_summary(table: FlowTable, by: str | None = None) -> dict[str, int]:
    keys = _class_keys(table, by)
    out: dict[str, int] = {}
    for k in keys:
        out[k] = out.get(k, 0) + 1
    return dict(sorted(out.items()))


# splitting --------------------------------------------------------------------


def _per_class_indices(y: np.ndarray):
    return [np.flatnonzero(y == c) for c in np.unique(y)]


def train_test_indices(table: FlowTable, train_fraction: float = DEFAULT_TRAIN_FRACTION,
                       seed: int = 0, stratified: bool = True, target: str = TARGET_COLUMN):
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = table.row_count
    if n < 2:
        raise DataError(f"need at least 2 rows to split, got {n}")
    rng = rng_for(seed)
    if stratified:
        groups = [rng.permutation(idx) for idx in _per_class_indices(target_of(table, target))]
        sizes = [round_half_up(train_fraction * len(g)) for g in groups]
        total = sum(sizes)
        if total == n or total == 0:
            big = int(np.argmax([len(g) for g in groups]))
            sizes[big] += -1 if total == n else 1
        train = np.concatenate([g[:s] for g, s in zip(groups, sizes)])
        test = np.concatenate([g[s:] for g, s in zip(groups, sizes)])
    else:
        perm = rng.permutation(n)
        k = min(max(round_half_up(train_fraction * n), 1), n - 1)
        train, test = perm[:k], perm[k:]
    return np.sort(train), np.sort(test)


def split_train_test(table: FlowTable, train_fraction: float = DEFAULT_TRAIN_FRACTION,
                     seed: int = 0, stratified: bool = True, target: str = TARGET_COLUMN):
    """Disjoint train/test tables; stratified rounding is done per class."""
    train, test = train_test_indices(table, train_fraction, seed, stratified, target)
    return table.take(train), table.take(test)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: np.ndarray = field(repr=False)

    def __post_init__(self):
        folds = np.asarray(self.folds, dtype=np.int64)
        if self.k < 1:
            raise ConfigError("k must be positive")
        if len(folds) and (folds.min() < 0 or folds.max() >= self.k):
            raise DataError("fold index out of range")
        folds = folds.view()
        folds.flags.writeable = False
        object.__setattr__(self, "folds", folds)

    @property
    def sizes(self) -> list[int]:
        return np.bincount(self.folds, minlength=self.k).tolist()

    def test_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.folds == i)

    def train_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.folds != i)


def make_folds(table: FlowTable, k: int = DEFAULT_FOLDS, seed: int = 0,
               stratified: bool = True, target: str = TARGET_COLUMN) -> FoldAssignment:
    """Assign each row to one of ``k`` folds of near-equal size.

    Rows are shuffled (within each class when stratified), laid end to end
    class after class, and dealt round-robin, so fold sizes and per-class
    fold counts each differ by at most one.
    """
    n = table.row_count
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the number of rows ({n})")
    rng = rng_for(seed)
    if stratified:
        order = np.concatenate([rng.permutation(idx)
                                for idx in _per_class_indices(target_of(table, target))])
    else:
        order = rng.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % k
    return FoldAssignment(k, folds)


# composite cleaning stage ----------------------------------------------------------


def clean(table: FlowTable, string_columns: Sequence[str] | None = None):
    """String indexing, duplicate removal and missing-row removal, in that order.

    Returns ``(table, info)`` with the index maps, duplicate count and
    missing-record report.
    """
    table, maps = index_strings(table, string_columns)
    table, dupes = drop_duplicates(table)
    table, missing = drop_missing(table)
    log.info("cleaning removed %d duplicates and %d incomplete rows", dupes, sum(missing.values()))
    return table, {"index_maps": maps, "duplicates_removed": dupes, "missing_report": missing}
