"""In-process data-parallel map/aggregate over contiguous row partitions.

Aggregates are exact integer statistics, so merging partition results gives
the same answer for every partition count and every worker schedule.  Merges
are nonetheless always applied in partition-index order.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Generic, Mapping, Sequence, TypeVar

import numpy as np

from .dataset import FlowTable
from .errors import ConfigError

T = TypeVar("T")

DEFAULT_PARTITIONS = 8


def partition_bounds(n_rows: int, n: int) -> list[tuple[int, int]]:
    """Contiguous ``[start, stop)`` ranges; sizes differ by at most one.

    Leading partitions take the extra rows.  When ``n > n_rows`` only
    ``max(n_rows, 1)`` partitions are produced.
    """
    if n < 1:
        raise ConfigError(f"partition count must be at least 1, got {n}")
    n = min(n, max(n_rows, 1))
    base, extra = divmod(n_rows, n)
    bounds, start = [], 0
    for i in range(n):
        stop = start + base + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def _slice(source, start: int, stop: int):
    if isinstance(source, FlowTable):
        return source.slice(start, stop)
    if isinstance(source, np.ndarray):
        return source[start:stop]
    if isinstance(source, Mapping):
        return {k: v[start:stop] for k, v in source.items()}
    if isinstance(source, (tuple, list)):
        return type(source)(v[start:stop] for v in source)
    raise TypeError(f"cannot partition a {type(source).__name__}")


def _length(source) -> int:
    if isinstance(source, FlowTable):
        return source.row_count
    if isinstance(source, np.ndarray):
        return len(source)
    if isinstance(source, Mapping):
        return len(next(iter(source.values()))) if source else 0
    return len(source[0]) if len(source) else 0


@dataclass(frozen=True)
class PartitionedTable:
    """Row-range view of a table, or of a bundle of equal-length arrays."""

    source: Any
    bounds: tuple[tuple[int, int], ...]

    @property
    def partition_count(self) -> int:
        return len(self.bounds)

    @property
    def row_count(self) -> int:
        return self.bounds[-1][1] if self.bounds else 0

    def partitions(self) -> list:
        return [_slice(self.source, a, b) for a, b in self.bounds]

    def sizes(self) -> list[int]:
        return [b - a for a, b in self.bounds]


def partition(table, n: int = DEFAULT_PARTITIONS) -> PartitionedTable:
    return PartitionedTable(table, tuple(partition_bounds(_length(table), n)))


@dataclass(frozen=True)
class Aggregator(Generic[T]):
    """A monoid over partial statistics.

    ``accumulate(acc, row)`` folds one row into an accumulator.
    ``accumulate_partition(part)``, when given, folds a whole partition at
    once; it must agree with repeated ``accumulate`` from ``zero()``.
    ``merge`` must be associative and commutative with ``zero()`` as identity.
    """

    zero: Callable[[], T]
    merge: Callable[[T, T], T]
    accumulate: Callable[[T, Any], T] | None = None
    accumulate_partition: Callable[[Any], T] | None = None

    def fold(self, part) -> T:
        if self.accumulate_partition is not None:
            return self.accumulate_partition(part)
        if self.accumulate is None:
            raise ConfigError("aggregator needs accumulate or accumulate_partition")
        acc = self.zero()
        for row in _rows(part):
            acc = self.accumulate(acc, row)
        return acc


def _rows(part):
    if isinstance(part, FlowTable):
        cols = [part.column(n) for n in part.names]
        for i in range(part.row_count):
            yield {n: c[i] for n, c in zip(part.names, cols)}
    elif isinstance(part, np.ndarray):
        yield from part
    elif isinstance(part, Mapping):
        keys = list(part)
        yield from (dict(zip(keys, vals)) for vals in zip(*part.values()))
    else:
        yield from zip(*part)


class PartitionedExecutor:
    """Runs aggregators over ``partitions`` row ranges with a thread pool."""

    def __init__(self, partitions: int = DEFAULT_PARTITIONS, workers: int | None = None):
        if partitions < 1:
            raise ConfigError(f"partitions must be at least 1, got {partitions}")
        self.partitions = partitions
        self.workers = workers if workers is not None else (os.cpu_count() or 1)
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")

    def __repr__(self):
        return f"PartitionedExecutor(partitions={self.partitions}, workers={self.workers})"

    def partition(self, source) -> PartitionedTable:
        return partition(source, self.partitions)

    def aggregate(self, source, agg: Aggregator[T]) -> T:
        pt = source if isinstance(source, PartitionedTable) else self.partition(source)
        return aggregate(pt, agg, self.workers)

    def map(self, source, fn: Callable[[Any], T]) -> list[T]:
        """Apply ``fn`` to every partition; results come back in partition order."""
        pt = source if isinstance(source, PartitionedTable) else self.partition(source)
        return _run(fn, pt.partitions(), self.workers)


def _run(fn, parts: Sequence, workers: int) -> list:
    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(parts))) as pool:
            return list(pool.map(fn, parts))
    return [fn(p) for p in parts]


def aggregate(pt: PartitionedTable, agg: Aggregator[T], workers: int = 1) -> T:
    partials = _run(agg.fold, pt.partitions(), workers)
    result = agg.zero()
    for partial in partials:
        result = agg.merge(result, partial)
    return result


def histogram_aggregator(size: int, index_fn: Callable[[Any], tuple[np.ndarray, np.ndarray | None]]):
    """Aggregator of an integer histogram with ``size`` cells.

    ``index_fn(part)`` returns the flat cell index of every contribution and
    optional integer weights.
    """
    def zero():
        return np.zeros(size, dtype=np.int64)

    def fold(part):
        idx, weights = index_fn(part)
        if weights is None:
            return np.bincount(idx, minlength=size).astype(np.int64)
        # weights are small integers, so float sums below 2**53 are exact
        return np.rint(np.bincount(idx, weights=weights, minlength=size)).astype(np.int64)

    return Aggregator(zero=zero, merge=np.add, accumulate_partition=fold)
