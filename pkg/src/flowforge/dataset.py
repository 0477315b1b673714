"""Columnar flow tables, column schemas and label derivation.

A :class:`FlowTable` is an immutable bundle of equal-length numpy arrays
described by a list of :class:`ColumnSchema` entries.  Every transform in the
package returns a new table; the arrays inside a table are read-only views.

Column storage conventions:

* ``numeric`` columns are ``float64`` with ``NaN`` as the missing marker.
* ``categorical`` and label columns are ``object`` arrays of ``str`` before
  indexing, with ``None`` as the missing marker.  After string indexing a
  categorical column holds ``int64`` codes and :data:`MISSING_CODE` marks a
  missing cell.
* ``excluded`` columns are carried along untouched and never used as
  features.
* The ``target`` column (added by :func:`derive_labels`) holds ``int64``
  class indices into ``FlowTable.target_names``.
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL_BINARY = "label-binary"
LABEL_CATEGORY = "label-category"
LABEL_SUBCATEGORY = "label-subcategory"
EXCLUDED = "excluded"
TARGET = "target"

COLUMN_KINDS = frozenset(
    {NUMERIC, CATEGORICAL, LABEL_BINARY, LABEL_CATEGORY, LABEL_SUBCATEGORY, EXCLUDED, TARGET}
)
LABEL_KINDS = (LABEL_BINARY, LABEL_CATEGORY, LABEL_SUBCATEGORY)
FEATURE_KINDS = (NUMERIC, CATEGORICAL)

TARGET_COLUMN = "target"
MISSING_CODE = -1

# The eleven attack/normal classes, as they appear in the missing-record table.
SUBCATEGORY_CLASSES = (
    "DDoS_TCP",
    "DoS_HTTP",
    "DoS_UDP",
    "Theft_Data_Exfiltration",
    "DDoS_HTTP",
    "Theft_Keylogging",
    "DDoS_UDP",
    "Reconnaissance_OS_Fingerprint",
    "Reconnaissance_Service_Scan",
    "Normal",
    "DoS_TCP",
)
MAIN_CATEGORIES = ("DDoS", "DoS", "Reconnaissance", "Normal", "Theft")

_ATTACK_VALUES = frozenset({"attack", "1", "1.0", "true"})
_NORMAL_VALUES = frozenset({"normal", "0", "0.0", "false"})


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    nullable: bool = True

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}", [self.name])

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "nullable": self.nullable}


def validate_schema(schema: Sequence[ColumnSchema]) -> None:
    """Check name uniqueness and the label-column cardinality rules."""
    names = [c.name for c in schema]
    dupes = sorted(n for n, k in Counter(names).items() if k > 1)
    if dupes:
        raise SchemaError(f"duplicate column names: {dupes}", dupes)
    kinds = Counter(c.kind for c in schema)
    if kinds[LABEL_BINARY] != 1:
        raise SchemaError(
            f"schema needs exactly one {LABEL_BINARY} column, found {kinds[LABEL_BINARY]}"
        )
    for kind in (LABEL_CATEGORY, LABEL_SUBCATEGORY, TARGET):
        if kinds[kind] > 1:
            raise SchemaError(f"schema has {kinds[kind]} columns of kind {kind}")


def schema_from_json(obj) -> list[ColumnSchema]:
    if isinstance(obj, Mapping):
        obj = obj.get("columns", obj)
    try:
        schema = [
            ColumnSchema(str(c["name"]), str(c["kind"]), bool(c.get("nullable", True)))
            for c in obj
        ]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema entry: {exc}") from exc
    validate_schema(schema)
    return schema


def load_schema(path: str | Path | None = None) -> list[ColumnSchema]:
    """Load a JSON schema file; ``None`` loads the bundled BoT-IoT schema."""
    if path is None:
        text = resources.files("flowforge.data").joinpath("bot_iot_schema.json").read_text()
    else:
        text = Path(path).read_text()
    return schema_from_json(json.loads(text))


def default_schema() -> list[ColumnSchema]:
    return load_schema(None)


def save_schema(schema: Sequence[ColumnSchema], path: str | Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in schema], indent=2) + "\n")


def _freeze(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DataError(f"columns must be one-dimensional, got shape {arr.shape}")
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class FlowTable:
    schema: tuple[ColumnSchema, ...]
    columns: Mapping[str, np.ndarray]
    target_names: tuple[str, ...] = ()

    def __post_init__(self):
        schema = tuple(self.schema)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names", names)
        missing = [n for n in names if n not in self.columns]
        extra = [n for n in self.columns if n not in set(names)]
        if missing or extra:
            raise SchemaError(
                f"columns do not match schema (missing {missing}, unexpected {extra})",
                missing + extra,
            )
        cols = {n: _freeze(self.columns[n]) for n in names}
        lengths = {len(a) for a in cols.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have differing lengths {sorted(lengths)}")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", MappingProxyType(cols))
        object.__setattr__(self, "target_names", tuple(self.target_names))

    # construction helpers -------------------------------------------------

    @classmethod
    def empty(cls, schema: Sequence[ColumnSchema]) -> "FlowTable":
        cols = {c.name: _empty_column(c.kind) for c in schema}
        return cls(tuple(schema), cols)

    @classmethod
    def concat(cls, tables: Sequence["FlowTable"]) -> "FlowTable":
        if not tables:
            raise DataError("cannot concatenate zero tables")
        first = tables[0]
        for t in tables[1:]:
            if t.schema != first.schema:
                raise SchemaError("tables with different schemas cannot be concatenated")
        cols = {
            c.name: np.concatenate([t.columns[c.name] for t in tables]) for c in first.schema
        }
        return cls(first.schema, cols, first.target_names)

    # accessors -------------------------------------------------------------

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def __len__(self):
        return self.row_count

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"no column named {name!r}", [name]) from None

    def kind_of(self, name: str) -> str:
        for c in self.schema:
            if c.name == name:
                return c.kind
        raise SchemaError(f"no column named {name!r}", [name])

    def columns_of_kind(self, *kinds: str) -> list[str]:
        return [c.name for c in self.schema if c.kind in kinds]

    def label_column(self, kind: str) -> str | None:
        found = self.columns_of_kind(kind)
        return found[0] if found else None

    @property
    def feature_names(self) -> list[str]:
        """Trainable columns: numeric and categorical, in schema order."""
        return self.columns_of_kind(*FEATURE_KINDS)

    def feature_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.feature_names if names is None else list(names)
        if not names:
            return np.zeros((self.row_count, 0))
        try:
            return np.column_stack([self.column(n).astype(np.float64) for n in names])
        except (TypeError, ValueError) as exc:
            raise DataError(f"feature columns are not numeric yet: {exc}") from exc

    # transforms --------------------------------------------------------------

    def take(self, indices) -> "FlowTable":
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        elif idx.size == 0:
            idx = idx.astype(np.int64)
        cols = {n: a[idx] for n, a in self.columns.items()}
        return FlowTable(self.schema, cols, self.target_names)

    def slice(self, start: int, stop: int) -> "FlowTable":
        cols = {n: a[start:stop] for n, a in self.columns.items()}
        return FlowTable(self.schema, cols, self.target_names)

    def with_column(self, column: ColumnSchema, values, target_names=None) -> "FlowTable":
        """Replace (keeping position) or append a column."""
        schema = list(self.schema)
        for i, c in enumerate(schema):
            if c.name == column.name:
                schema[i] = column
                break
        else:
            schema.append(column)
        cols = dict(self.columns)
        cols[column.name] = values
        names = self.target_names if target_names is None else target_names
        return FlowTable(tuple(schema), cols, names)

    def with_columns(self, updates: Mapping[str, np.ndarray], kinds: Mapping[str, str] | None = None):
        """Replace the values (and optionally the kind) of existing columns."""
        kinds = kinds or {}
        schema = []
        for c in self.schema:
            if c.name in kinds:
                c = ColumnSchema(c.name, kinds[c.name], c.nullable)
            schema.append(c)
        for name in updates:
            self.column(name)
        cols = dict(self.columns)
        cols.update(updates)
        return FlowTable(tuple(schema), cols, self.target_names)

    def select(self, names: Sequence[str]) -> "FlowTable":
        keep = set(names)
        schema = tuple(c for c in self.schema if c.name in keep)
        return FlowTable(schema, {c.name: self.columns[c.name] for c in schema}, self.target_names)

    def equals(self, other: "FlowTable") -> bool:
        """Exact equality; NaN cells compare equal to NaN cells."""
        if self.schema != other.schema or self.row_count != other.row_count:
            return False
        if self.target_names != other.target_names:
            return False
        for name in self.names:
            a, b = self.columns[name], other.columns[name]
            if a.dtype.kind == "f" and b.dtype.kind == "f":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif a.dtype != b.dtype or not np.array_equal(a, b):
                return False
        return True

    def __repr__(self):
        return f"FlowTable(rows={self.row_count}, columns={self.names})"


def _empty_column(kind: str) -> np.ndarray:
    if kind == NUMERIC:
        return np.zeros(0, dtype=np.float64)
    if kind == TARGET:
        return np.zeros(0, dtype=np.int64)
    return np.zeros(0, dtype=object)


def missing_mask(values: np.ndarray) -> np.ndarray:
    """Boolean mask of missing cells for any supported column dtype."""
    if values.dtype.kind == "f":
        return np.isnan(values)
    if values.dtype.kind in "iu":
        return values < 0 if values.dtype.kind == "i" else np.zeros(len(values), dtype=bool)
    return np.fromiter((v is None for v in values), dtype=bool, count=len(values))


# labels ---------------------------------------------------------------------


class TaskVariant(str, enum.Enum):
    BINARY = "binary"
    MAIN_CATEGORY = "category"
    SUBCATEGORY = "subcategory"


_EXPECTED_CLASSES = {TaskVariant.MAIN_CATEGORY: 5, TaskVariant.SUBCATEGORY: 11}


@dataclass(frozen=True)
class LabelTask:
    """Which labelling to learn, plus the fixed class order of the target."""

    variant: TaskVariant
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        variant = TaskVariant(self.variant)
        object.__setattr__(self, "variant", variant)
        names = tuple(self.class_names)
        if variant is TaskVariant.BINARY:
            if names and names != ("normal", "attack"):
                raise DataError("binary task classes must be ('normal', 'attack')")
            names = ("normal", "attack")
        elif len(names) != _EXPECTED_CLASSES[variant]:
            raise DataError(
                f"{variant.value} task needs exactly {_EXPECTED_CLASSES[variant]} classes, "
                f"got {len(names)}: {list(names)}"
            )
        if len(set(names)) != len(names):
            raise DataError(f"duplicate class names {list(names)}")
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @classmethod
    def binary(cls) -> "LabelTask":
        return cls(TaskVariant.BINARY)

    @classmethod
    def main_category(cls, names: Sequence[str] = MAIN_CATEGORIES) -> "LabelTask":
        return cls(TaskVariant.MAIN_CATEGORY, tuple(names))

    @classmethod
    def subcategory(cls, names: Sequence[str] = SUBCATEGORY_CLASSES) -> "LabelTask":
        return cls(TaskVariant.SUBCATEGORY, tuple(names))

    @classmethod
    def infer(cls, variant, table: FlowTable) -> "LabelTask":
        """Build a task whose class order is frequency-descending in ``table``.

        Ties are broken lexicographically.  The binary task ignores the table
        and always uses ``normal=0, attack=1``.
        """
        variant = TaskVariant(variant)
        if variant is TaskVariant.BINARY:
            return cls.binary()
        names = raw_class_names(table, variant)
        return cls(variant, tuple(frequency_order(names)))


def frequency_order(values: Iterable[str]) -> list[str]:
    """Distinct values sorted by descending count, ties ascending."""
    counts = Counter(values)
    return sorted(counts, key=lambda v: (-counts[v], v))


def subcategory_name(category: str, subcategory: str) -> str:
    """Concatenated class name; identical parts (``Normal``/``Normal``) collapse."""
    category, subcategory = category.strip(), subcategory.strip()
    if category == subcategory:
        return category
    return f"{category}_{subcategory}"


def _label_values(table: FlowTable, kind: str) -> np.ndarray:
    name = table.label_column(kind)
    if name is None:
        raise SchemaError(f"table has no {kind} column required by the task", [kind])
    values = table.column(name)
    bad = missing_mask(values)
    if bad.any():
        raise DataError(f"label column {name!r} has {int(bad.sum())} missing values")
    return values


def raw_class_names(table: FlowTable, variant) -> list[str]:
    """Per-row class names (as strings) for the given task variant."""
    variant = TaskVariant(variant)
    if variant is TaskVariant.BINARY:
        values = _label_values(table, LABEL_BINARY)
        return [_binary_name(v) for v in values]
    category = _label_values(table, LABEL_CATEGORY)
    if variant is TaskVariant.MAIN_CATEGORY:
        return [str(v).strip() for v in category]
    sub = _label_values(table, LABEL_SUBCATEGORY)
    return [subcategory_name(str(c), str(s)) for c, s in zip(category, sub)]


def _binary_name(value) -> str:
    text = str(value).strip().lower()
    if text in _ATTACK_VALUES:
        return "attack"
    if text in _NORMAL_VALUES:
        return "normal"
    raise DataError(f"unrecognised binary label value {value!r}")


def derive_labels(table: FlowTable, task: LabelTask) -> FlowTable:
    """Add (or replace) the integer ``target`` column for ``task``.

    Source label columns are preserved.  Labels outside ``task.class_names``
    raise :class:`DataError`.
    """
    names = raw_class_names(table, task.variant)
    lookup = {n: i for i, n in enumerate(task.class_names)}
    try:
        codes = np.fromiter((lookup[n] for n in names), dtype=np.int64, count=len(names))
    except KeyError as exc:
        raise DataError(
            f"label {exc.args[0]!r} is not one of the task classes {list(task.class_names)}"
        ) from None
    return table.with_column(ColumnSchema(TARGET_COLUMN, TARGET, False), codes, task.class_names)


def target_of(table: FlowTable, target: str = TARGET_COLUMN) -> np.ndarray:
    values = table.column(target)
    if values.dtype.kind not in "iu":
        raise TypeError(f"target column {target!r} is not integer encoded ({values.dtype})")
    return values


def n_classes_of(table: FlowTable, target: str = TARGET_COLUMN) -> int:
    if table.target_names:
        return len(table.target_names)
    y = target_of(table, target)
    return int(y.max()) + 1 if len(y) else 0


def class_counts(table: FlowTable, target: str = TARGET_COLUMN, by_name: bool = False) -> dict:
    """Rows per class, including classes with zero rows."""
    y = target_of(table, target)
    n = n_classes_of(table, target)
    counts = np.bincount(y, minlength=n) if len(y) else np.zeros(n, dtype=np.int64)
    if by_name and table.target_names:
        return {name: int(counts[i]) for i, name in enumerate(table.target_names)}
    return {i: int(c) for i, c in enumerate(counts)}
