"""Reading, merging and writing sharded flow CSV files."""
from __future__ import annotations

import csv
import glob
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import NUMERIC, TARGET, ColumnSchema, FlowTable, load_schema
from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

MISSING_MARKERS = frozenset({"", "nan", "NaN"})
CHUNK_ROWS = 65536


@dataclass(frozen=True)
class ShardManifest:
    paths: tuple[str, ...]
    expect_header: bool = True
    delimiter: str = ","

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(str(p) for p in self.paths))
        if not self.paths:
            raise DataError("shard manifest is empty")
        if len(self.delimiter) != 1:
            raise DataError(f"delimiter must be one character, got {self.delimiter!r}")

    @classmethod
    def from_file(cls, path, **kwargs) -> "ShardManifest":
        """One shard path per line; blank lines and ``#`` comments are skipped.

        Relative paths are resolved against the manifest's directory.
        """
        base = Path(path).parent
        paths = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                p = Path(line)
                paths.append(str(p if p.is_absolute() else base / p))
        return cls(tuple(paths), **kwargs)

    @classmethod
    def from_glob(cls, pattern: str, **kwargs) -> "ShardManifest":
        return cls(tuple(sorted(glob.glob(pattern))), **kwargs)

    @classmethod
    def resolve(cls, spec: str, **kwargs) -> "ShardManifest":
        """Interpret ``spec`` as a manifest file if it is one, else as a glob."""
        if Path(spec).is_file() and not spec.endswith(".csv"):
            return cls.from_file(spec, **kwargs)
        return cls.from_glob(spec, **kwargs)


def _parse_numeric(cells: list[str], markers) -> np.ndarray:
    out = np.empty(len(cells), dtype=np.float64)
    for i, cell in enumerate(cells):
        if cell in markers:
            out[i] = math.nan
            continue
        try:
            out[i] = float(cell)
        except ValueError:
            out[i] = math.nan
    return out


def _parse_column(kind: str, cells: list[str], markers) -> np.ndarray:
    if kind == NUMERIC:
        return _parse_numeric(cells, markers)
    if kind == TARGET:
        try:
            return np.array([int(c) for c in cells], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"target column holds a non-integer: {exc}") from None
    out = np.empty(len(cells), dtype=object)
    for i, cell in enumerate(cells):
        out[i] = None if cell in markers else cell
    return out


def _check_header(header: list[str], schema: Sequence[ColumnSchema], source) -> list[int]:
    names = [c.name for c in schema]
    header = [h.strip() for h in header]
    absent = [n for n in names if n not in header]
    unexpected = [h for h in header if h not in set(names)]
    if absent or unexpected:
        parts = []
        if absent:
            parts.append(f"missing {absent}")
        if unexpected:
            parts.append(f"unexpected {unexpected}")
        raise SchemaError(f"{source}: header does not match schema ({'; '.join(parts)})",
                          absent + unexpected)
    return [header.index(n) for n in names]


def read_csv(
    path,
    schema: Sequence[ColumnSchema],
    *,
    header: bool = True,
    delimiter: str = ",",
    missing_markers=MISSING_MARKERS,
    chunk_rows: int = CHUNK_ROWS,
) -> FlowTable:
    """Parse one CSV file into a :class:`FlowTable`.

    Unparsable numeric cells and missing markers become missing values; rows
    are never dropped here.  The file is consumed in chunks of ``chunk_rows``
    so raw text is never held in memory all at once.
    """
    schema = tuple(schema)
    chunks: list[dict[str, np.ndarray]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        if header:
            try:
                first = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: file is empty, expected a header row") from None
            order = _check_header(first, schema, path)
        else:
            order = list(range(len(schema)))
        width = len(order) if not header else len(first)
        buffer: list[list[str]] = []
        for row in reader:
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}:{reader.line_num}: expected {width} fields, found {len(row)}"
                )
            buffer.append(row)
            if len(buffer) >= chunk_rows:
                chunks.append(_columns_from_rows(buffer, schema, order, missing_markers))
                buffer = []
        if buffer or not chunks:
            chunks.append(_columns_from_rows(buffer, schema, order, missing_markers))
    if len(chunks) == 1:
        return FlowTable(schema, chunks[0])
    cols = {c.name: np.concatenate([ch[c.name] for ch in chunks]) for c in schema}
    return FlowTable(schema, cols)


def _columns_from_rows(rows, schema, order, markers) -> dict[str, np.ndarray]:
    cols = {}
    for col, pos in zip(schema, order):
        cells = [r[pos] for r in rows]
        cols[col.name] = _parse_column(col.kind, cells, markers)
    return cols


def union_shards(manifest: ShardManifest, schema: Sequence[ColumnSchema], workers: int = 1,
                 **read_kwargs) -> FlowTable:
    """Read every shard and stack them in manifest order.

    Shards may be parsed concurrently; output order never depends on
    scheduling.  A mismatched shard aborts the union with its path in the
    error message.
    """
    def load(path):
        try:
            return read_csv(path, schema, header=manifest.expect_header,
                            delimiter=manifest.delimiter, **read_kwargs)
        except SchemaError as exc:
            if str(path) in str(exc):
                raise
            raise SchemaError(f"shard {path}: {exc}", exc.columns) from exc

    if workers > 1 and len(manifest.paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tables = list(pool.map(load, manifest.paths))
    else:
        tables = [load(p) for p in manifest.paths]
    log.info("merged %d shards, %d rows", len(tables), sum(t.row_count for t in tables))
    return tables[0] if len(tables) == 1 else FlowTable.concat(tables)


def format_number(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    if math.isnan(value):
        return ""
    if value == 0.0:
        return "-0.0" if math.copysign(1.0, value) < 0 else "0"
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def _format_column(values: np.ndarray) -> list[str]:
    kind = values.dtype.kind
    if kind == "f":
        return [format_number(float(v)) for v in values]
    if kind in "iub":
        return [str(int(v)) for v in values]
    return ["" if v is None else str(v) for v in values]


def write_csv(table: FlowTable, path, delimiter: str = ",") -> None:
    """Write ``table`` with a header row and RFC-4180 quoting."""
    formatted = [_format_column(table.column(n)) for n in table.names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, quoting=csv.QUOTE_MINIMAL,
                            lineterminator="\n")
        writer.writerow(table.names)
        writer.writerows(zip(*formatted))


def schema_path_for(csv_path) -> Path:
    """Where a schema written alongside ``csv_path`` lives: ``<stem>.schema.json``."""
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.json")


def schema_for_input(csv_path, schema_path=None) -> list[ColumnSchema]:
    """Explicit schema, else the one written next to the CSV, else the bundled default."""
    if schema_path:
        return load_schema(schema_path)
    sibling = schema_path_for(csv_path)
    return load_schema(sibling if sibling.is_file() else None)


def merge(manifest: ShardManifest, schema: Sequence[ColumnSchema], out, workers: int = 1) -> FlowTable:
    table = union_shards(manifest, schema, workers=workers)
    write_csv(table, out)
    return table
