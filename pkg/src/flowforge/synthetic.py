"""Seeded synthetic flow corpora with known class structure.

Each class draws every numeric feature from its own probability vector over
equal-width bins (uniform within the bin) and every categorical feature from
its own value distribution.  Extra rows with one blanked cell and exact
copies of clean rows can be injected in known numbers, which lets tests
replay the cleaning stages against exact expected counts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import (
    CATEGORICAL,
    EXCLUDED,
    LABEL_BINARY,
    LABEL_CATEGORY,
    LABEL_SUBCATEGORY,
    NUMERIC,
    ColumnSchema,
    FlowTable,
    save_schema,
    subcategory_name,
)
from .errors import ConfigError
from .ingest import schema_path_for, write_csv
from .preprocess import rng_for, round_half_up

# Missing-record counts per class reported for the BoT-IoT corpus (sum 2,803).
REFERENCE_MISSING_ROWS = {
    "DDoS_TCP": 499,
    "DoS_HTTP": 26,
    "DoS_UDP": 522,
    "Theft_Data_Exfiltration": 4,
    "DDoS_HTTP": 30,
    "Theft_Keylogging": 5,
    "DDoS_UDP": 420,
    "Reconnaissance_OS_Fingerprint": 128,
    "Reconnaissance_Service_Scan": 320,
    "Normal": 471,
    "DoS_TCP": 378,
}

# Clean rows per class: 29,507 attack rows and 2,761 normal rows in total,
# with 36 exfiltration rows and 6,000 DoS UDP rows as in the partial dataset.
PARTIAL_CLASS_ROWS = {
    "DDoS_TCP": 5000,
    "DDoS_UDP": 6000,
    "DDoS_HTTP": 800,
    "DoS_TCP": 5000,
    "DoS_UDP": 6000,
    "DoS_HTTP": 1000,
    "Reconnaissance_Service_Scan": 3000,
    "Reconnaissance_OS_Fingerprint": 2000,
    "Theft_Keylogging": 671,
    "Theft_Data_Exfiltration": 36,
    "Normal": 2761,
}

_CLASS_PARTS = {
    "DDoS_TCP": ("DDoS", "TCP"),
    "DDoS_UDP": ("DDoS", "UDP"),
    "DDoS_HTTP": ("DDoS", "HTTP"),
    "DoS_TCP": ("DoS", "TCP"),
    "DoS_UDP": ("DoS", "UDP"),
    "DoS_HTTP": ("DoS", "HTTP"),
    "Reconnaissance_Service_Scan": ("Reconnaissance", "Service_Scan"),
    "Reconnaissance_OS_Fingerprint": ("Reconnaissance", "OS_Fingerprint"),
    "Theft_Keylogging": ("Theft", "Keylogging"),
    "Theft_Data_Exfiltration": ("Theft", "Data_Exfiltration"),
    "Normal": ("Normal", "Normal"),
}

NUMERIC_FEATURES = (
    ("pkts", 500.0), ("bytes", 1.0e6), ("dur", 100.0), ("mean", 5.0), ("stddev", 2.5),
    ("min", 5.0), ("max", 5.0), ("spkts", 400.0), ("sbytes", 8.0e5), ("rate", 5000.0),
    ("srate", 5000.0), ("TnP_PSrcIP", 1.0e4), ("N_IN_Conn_P_SrcIP", 100.0),
    ("N_IN_Conn_P_DstIP", 100.0),
)
CATEGORICAL_FEATURES = ("proto", "flgs", "state", "sport", "dport")
BINARY_LABEL, CATEGORY_LABEL, SUBCATEGORY_LABEL = "label", "category", "subcategory"
N_BINS = 16


@dataclass(frozen=True)
class ClassProfile:
    category: str
    subcategory: str
    rows: int
    numeric: tuple[tuple[float, ...], ...]
    categorical: Mapping[str, Mapping[str, float]]

    @property
    def name(self) -> str:
        return subcategory_name(self.category, self.subcategory)

    def to_dict(self):
        return {
            "category": self.category,
            "subcategory": self.subcategory,
            "rows": self.rows,
            "numeric": [list(p) for p in self.numeric],
            "categorical": {k: dict(v) for k, v in self.categorical.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["category"], d["subcategory"], int(d["rows"]),
                   tuple(tuple(float(x) for x in p) for p in d["numeric"]),
                   {k: {s: float(x) for s, x in v.items()} for k, v in d["categorical"].items()})


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassProfile, ...]
    numeric_features: tuple[str, ...]
    numeric_scales: tuple[float, ...]
    categorical_features: tuple[str, ...] = CATEGORICAL_FEATURES
    missing: Mapping[str, int] = field(default_factory=dict)
    duplicates: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "missing", dict(self.missing))
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names in synthetic spec: {names}")
        if len(self.numeric_scales) != len(self.numeric_features):
            raise ConfigError("one scale per numeric feature is required")
        for c in self.classes:
            if c.rows < 0:
                raise ConfigError(f"class {c.name}: negative row count")
            if len(c.numeric) != len(self.numeric_features):
                raise ConfigError(f"class {c.name}: needs one bin vector per numeric feature")
            vectors = list(c.numeric) + [list(c.categorical.get(f, {}).values())
                                         for f in self.categorical_features]
            for p in vectors:
                if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
                    raise ConfigError(f"class {c.name}: probabilities must be >= 0 and sum to 1")
        for name, k in self.missing.items():
            if name not in names:
                raise ConfigError(f"missing-row count given for unknown class {name!r}")
            if k < 0:
                raise ConfigError(f"class {name}: negative missing-row count")
        if self.duplicates < 0:
            raise ConfigError("duplicate count must be non-negative")
        if self.duplicates and not sum(c.rows for c in self.classes):
            raise ConfigError("cannot inject duplicates into a corpus with no clean rows")

    @property
    def class_rows(self) -> dict[str, int]:
        return {c.name: c.rows for c in self.classes}

    def to_dict(self):
        return {
            "classes": [c.to_dict() for c in self.classes],
            "numeric_features": list(self.numeric_features),
            "numeric_scales": list(self.numeric_scales),
            "categorical_features": list(self.categorical_features),
            "missing": dict(self.missing),
            "duplicates": self.duplicates,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "SyntheticSpec":
        return cls(tuple(ClassProfile.from_dict(c) for c in d["classes"]),
                   tuple(d["numeric_features"]), tuple(float(s) for s in d["numeric_scales"]),
                   tuple(d.get("categorical_features", CATEGORICAL_FEATURES)),
                   {k: int(v) for k, v in d.get("missing", {}).items()},
                   int(d.get("duplicates", 0)), int(d.get("seed", 0)))

    def schema(self) -> list[ColumnSchema]:
        cols = [ColumnSchema("saddr", EXCLUDED), ColumnSchema("daddr", EXCLUDED)]
        cols += [ColumnSchema(n, CATEGORICAL) for n in self.categorical_features]
        cols += [ColumnSchema(n, NUMERIC) for n in self.numeric_features]
        cols += [ColumnSchema(BINARY_LABEL, LABEL_BINARY, False),
                 ColumnSchema(CATEGORY_LABEL, LABEL_CATEGORY, False),
                 ColumnSchema(SUBCATEGORY_LABEL, LABEL_SUBCATEGORY, False)]
        return cols


# class profiles ---------------------------------------------------------------------


def _peaked(center: float, width: float, floor: float = 0.012) -> tuple[float, ...]:
    bins = np.arange(N_BINS)
    p = np.exp(-0.5 * ((bins - center) / width) ** 2) + floor
    p /= p.sum()
    return tuple(float(x) for x in p)


def _normalised(weights: Mapping[str, float]) -> dict[str, float]:
    total = float(sum(weights.values()))
    return {k: v / total for k, v in weights.items()}


# (family, protocol) -> value weights; missing protocol falls back to the family.
_PROTO = {
    "TCP": {"tcp": 0.97, "udp": 0.02, "icmp": 0.01},
    "UDP": {"udp": 0.97, "tcp": 0.02, "icmp": 0.01},
    "HTTP": {"tcp": 1.0},
    "Service_Scan": {"tcp": 0.8, "udp": 0.15, "icmp": 0.05},
    "OS_Fingerprint": {"tcp": 0.6, "udp": 0.1, "icmp": 0.3},
    "Keylogging": {"tcp": 0.9, "udp": 0.1},
    "Data_Exfiltration": {"tcp": 0.9, "udp": 0.1},
    "Normal": {"udp": 0.55, "tcp": 0.25, "arp": 0.12, "icmp": 0.05, "ipv6-icmp": 0.03},
}
_FLGS = {
    "DDoS": {"e": 0.7, "e s": 0.2, "e d": 0.1},
    "DoS": {"e": 0.7, "e s": 0.15, "e d": 0.15},
    "Reconnaissance": {"e": 0.5, "e s": 0.3, "e *": 0.2},
    "Theft": {"e": 0.6, "e d": 0.3, "e s": 0.1},
    "Normal": {"e": 0.6, "e d": 0.2, "eU": 0.1, "e *": 0.1},
}
_STATE = {
    "TCP": {"REQ": 0.5, "RST": 0.3, "CON": 0.2},
    "UDP": {"INT": 0.9, "CON": 0.1},
    "HTTP": {"REQ": 0.4, "FIN": 0.3, "RST": 0.3},
    "Service_Scan": {"REQ": 0.45, "RST": 0.45, "URP": 0.1},
    "OS_Fingerprint": {"REQ": 0.4, "RST": 0.4, "URP": 0.2},
    "Keylogging": {"CON": 0.5, "FIN": 0.3, "RST": 0.2},
    "Data_Exfiltration": {"CON": 0.5, "FIN": 0.4, "RST": 0.1},
    "Normal": {"CON": 0.6, "INT": 0.2, "FIN": 0.1, "ACC": 0.1},
}
_DPORT = {
    "TCP": {"80": 0.4, "22": 0.2, "443": 0.2, "0": 0.2},
    "UDP": {"80": 0.5, "53": 0.2, "1900": 0.3},
    "HTTP": {"80": 0.9, "8080": 0.1},
    "Service_Scan": {str(p): 1.0 for p in (21, 22, 23, 25, 53, 80, 110, 139, 143, 443, 445, 3306)},
    "OS_Fingerprint": {"80": 0.3, "22": 0.2, "0": 0.3, "443": 0.2},
    "Keylogging": {"4444": 0.7, "80": 0.3},
    "Data_Exfiltration": {"4444": 0.6, "8080": 0.4},
    "Normal": {"53": 0.4, "1900": 0.2, "443": 0.2, "80": 0.1, "123": 0.1},
}


def default_profiles(class_rows: Mapping[str, int] = PARTIAL_CLASS_ROWS,
                     profile_seed: int = 2019) -> tuple[ClassProfile, ...]:
    """Profiles where families are well separated and siblings overlap.

    DoS and DDoS share their flood signature except on the source-side
    features; the two reconnaissance classes differ on a handful of features;
    normal traffic has its own signature.  The layout is fixed by
    ``profile_seed``, independent of the corpus seed.
    """
    rng = rng_for(profile_seed)
    d = len(NUMERIC_FEATURES)
    flood = rng.uniform(6, 15, size=d)
    families = {
        "DDoS": flood.copy(),
        "DoS": flood.copy(),
        "Reconnaissance": rng.uniform(2, 11, size=d),
        "Theft": rng.uniform(1, 9, size=d),
        "Normal": rng.uniform(0, 6, size=d),
    }
    source_side = [i for i, (n, _) in enumerate(NUMERIC_FEATURES) if "Src" in n or n == "srate"]
    families["DDoS"][source_side] = np.minimum(families["DDoS"][source_side] + 2.5, 15.0)
    families["DoS"][source_side] = np.maximum(families["DoS"][source_side] - 2.5, 0.0)
    protocol_shift = {p: rng.normal(0.0, 2.0, size=d) * (rng.random(d) < 0.35)
                      for p in _PROTO}
    profiles = []
    for name, rows in class_rows.items():
        family, proto = _CLASS_PARTS[name]
        centers = np.clip(families[family] + protocol_shift[proto], 0.0, N_BINS - 1.0)
        width = 1.6 if family != "Normal" else 2.0
        numeric = tuple(_peaked(c, width) for c in centers)
        sport = {"Normal": {str(p): 1.0 for p in (53, 123, 5353, 49152, 51000, 60000)}}.get(
            family, {str(p): 1.0 for p in range(1024, 65536, 4099)})
        categorical = {
            "proto": _normalised(_PROTO[proto]),
            "flgs": _normalised(_FLGS[family]),
            "state": _normalised(_STATE[proto]),
            "sport": _normalised(sport),
            "dport": _normalised(_DPORT[proto]),
        }
        profiles.append(ClassProfile(family, proto if family != "Normal" else "Normal",
                                     int(rows), numeric, categorical))
    return tuple(profiles)


def default_spec(seed: int = 0, scale: float = 1.0, missing: Mapping[str, int] | None = None,
                 duplicates: int = 0, class_rows: Mapping[str, int] = PARTIAL_CLASS_ROWS) -> SyntheticSpec:
    """Partial-dataset stand-in: 11 classes, 29,507 attack and 2,761 normal clean rows.

    ``scale`` multiplies the clean row counts (rounded half-up).  ``missing``
    defaults to the per-class counts in :data:`REFERENCE_MISSING_ROWS`.
    """
    rows = {k: round_half_up(v * scale) for k, v in class_rows.items()}
    missing = dict(REFERENCE_MISSING_ROWS if missing is None else missing)
    return SyntheticSpec(
        classes=default_profiles(rows),
        numeric_features=tuple(n for n, _ in NUMERIC_FEATURES),
        numeric_scales=tuple(s for _, s in NUMERIC_FEATURES),
        categorical_features=CATEGORICAL_FEATURES,
        missing=missing,
        duplicates=duplicates,
        seed=seed,
    )


# generation --------------------------------------------------------------------------


def _choice(rng, weights: Mapping[str, float], size: int) -> np.ndarray:
    values = list(weights)
    probs = np.asarray([weights[v] for v in values], dtype=np.float64)
    picks = rng.choice(len(values), size=size, p=probs / probs.sum())
    return np.asarray(values, dtype=object)[picks]


def _class_block(rng, spec: SyntheticSpec, profile: ClassProfile, size: int) -> dict:
    block = {}
    octets = rng.integers(1, 255, size=(size, 2))
    block["saddr"] = np.asarray([f"192.168.100.{o}" for o in octets[:, 0]], dtype=object)
    block["daddr"] = np.asarray([f"192.168.100.{o}" for o in octets[:, 1]], dtype=object)
    for name in spec.categorical_features:
        block[name] = _choice(rng, profile.categorical[name], size)
    for name, scale, probs in zip(spec.numeric_features, spec.numeric_scales, profile.numeric):
        probs = np.asarray(probs)
        bins = rng.choice(len(probs), size=size, p=probs / probs.sum())
        block[name] = scale * (bins + rng.random(size)) / len(probs)
    label = "normal" if profile.category == "Normal" else "attack"
    block[BINARY_LABEL] = np.full(size, label, dtype=object)
    block[CATEGORY_LABEL] = np.full(size, profile.category, dtype=object)
    block[SUBCATEGORY_LABEL] = np.full(size, profile.subcategory, dtype=object)
    return block


def generate_synthetic(spec: SyntheticSpec, out: str | Path | None = None) -> FlowTable:
    """Build the corpus described by ``spec``; optionally write CSV (+ schema) to ``out``.

    Per class the clean rows come first, then ``missing[class]`` extra rows
    each with one blanked feature cell.  ``duplicates`` copies of uniformly
    chosen clean rows are appended and all rows are shuffled.
    """
    rng = rng_for(spec.seed)
    schema = spec.schema()
    features = list(spec.categorical_features) + list(spec.numeric_features)
    blocks, clean_mask = [], []
    for profile in spec.classes:
        n_missing = spec.missing.get(profile.name, 0)
        size = profile.rows + n_missing
        block = _class_block(rng, spec, profile, size)
        blank = rng.integers(0, len(features), size=n_missing)
        for i, f in enumerate(blank):
            col = block[features[f]]
            col[profile.rows + i] = None if col.dtype == object else np.nan
        blocks.append(block)
        clean_mask.append(np.arange(size) < profile.rows)
    cols = {c.name: np.concatenate([b[c.name] for b in blocks]) if blocks else np.zeros(0)
            for c in schema}
    for c in schema:
        if c.kind == NUMERIC:
            cols[c.name] = cols[c.name].astype(np.float64)
        else:
            cols[c.name] = cols[c.name].astype(object)
    clean = np.concatenate(clean_mask) if clean_mask else np.zeros(0, dtype=bool)
    order = np.arange(len(clean))
    if spec.duplicates:
        sources = rng.choice(np.flatnonzero(clean), size=spec.duplicates, replace=True)
        order = np.concatenate([order, sources])
    order = order[rng.permutation(len(order))]
    table = FlowTable(tuple(schema), {k: v[order] for k, v in cols.items()})
    if out is not None:
        write_corpus(table, out)
    return table


def write_corpus(table: FlowTable, out: str | Path) -> Path:
    """Write the CSV and a ``<stem>.schema.json`` next to it; returns the schema path."""
    out = Path(out)
    write_csv(table, out)
    schema_path = schema_path_for(out)
    save_schema(table.schema, schema_path)
    return schema_path


def load_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_dict(json.loads(Path(path).read_text()))


def class_rows_for(names: Sequence[str], rows: int) -> dict[str, int]:
    return {n: rows for n in names}
