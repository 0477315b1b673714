"""
A synthetic flow corpus, end to end
===================================

Builds the default synthetic corpus (11 traffic classes, 29,507 attack and
2,761 normal flows, plus rows with one blanked cell), writes it as CSV, reads
it back and cleans it.  Run with ``python demos/01_synthetic_corpus.py``.
"""
import tempfile
from pathlib import Path

import numpy as np

from flowforge.dataset import LabelTask, class_counts, derive_labels, load_schema
from flowforge.ingest import read_csv, schema_path_for
from flowforge.preprocess import clean
from flowforge.synthetic import REFERENCE_MISSING_ROWS, default_spec, generate_synthetic

out = Path(tempfile.mkdtemp()) / "corpus.csv"

# every class draws its numeric features from its own 16-bin profile
spec = default_spec(seed=2019, duplicates=40)
for c in spec.classes[:3]:
    print(f"{c.name:<32} rows {c.rows:>6}")
print("...")

raw = generate_synthetic(spec, out)
print("written", out, "rows", raw.row_count)

# the schema travels next to the CSV, so the file reads back unchanged
back = read_csv(out, load_schema(schema_path_for(out)))
assert back.equals(raw)

# cleaning: string indexing, then duplicate removal, then incomplete rows
table, info = clean(raw)
print("duplicates removed", info["duplicates_removed"])
print("incomplete rows per class:")
for name, n in info["missing_report"].items():
    print(f"  {name:<32} {n:>4}")
print("total", sum(info["missing_report"].values()), "(expected", sum(REFERENCE_MISSING_ROWS.values()), ")")

binary = derive_labels(table, LabelTask.binary())
counts = class_counts(binary, by_name=True)
print("binary counts", counts, "normal share", np.round(counts["normal"] / binary.row_count, 4))
