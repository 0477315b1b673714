import numpy as np
import pytest

from flowforge.dataset import (
    CATEGORICAL,
    EXCLUDED,
    LABEL_BINARY,
    LABEL_CATEGORY,
    LABEL_SUBCATEGORY,
    NUMERIC,
    ColumnSchema,
    FlowTable,
)
from flowforge.synthetic import default_spec, generate_synthetic


def make_table(numeric=None, categorical=None, labels=None, excluded=None):
    """Small FlowTable from plain lists; ``labels`` maps kind -> (name, values)."""
    schema, cols = [], {}
    for name, values in (excluded or {}).items():
        schema.append(ColumnSchema(name, EXCLUDED))
        cols[name] = np.asarray(values, dtype=object)
    for name, values in (categorical or {}).items():
        schema.append(ColumnSchema(name, CATEGORICAL))
        cols[name] = np.asarray(values, dtype=object)
    for name, values in (numeric or {}).items():
        schema.append(ColumnSchema(name, NUMERIC))
        cols[name] = np.asarray(values, dtype=np.float64)
    for kind, (name, values) in (labels or {}).items():
        schema.append(ColumnSchema(name, kind, False))
        cols[name] = np.asarray(values, dtype=object)
    return FlowTable(tuple(schema), cols)


def labelled(n_rows, rng, n_numeric=4):
    """Random table with a binary label (about one row in four is normal)."""
    numeric = {f"f{j}": rng.random(n_rows) for j in range(n_numeric)}
    attack = np.where(rng.random(n_rows) < 0.25, "normal", "attack")
    return make_table(numeric=numeric, labels={LABEL_BINARY: ("label", attack)})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A fifth-scale synthetic corpus written to disk (CSV + schema)."""
    path = tmp_path_factory.mktemp("corpus") / "small.csv"
    table = generate_synthetic(default_spec(seed=7, scale=0.2, duplicates=5), path)
    return path, table


LABEL_KINDS = (LABEL_BINARY, LABEL_CATEGORY, LABEL_SUBCATEGORY)


# acceptance reporting -------------------------------------------------------------------

ACCEPTANCE_CRITERIA = 9
_acceptance: dict[int, list[tuple[str, str]]] = {}


def record_acceptance(criterion: int, status: str, detail: str) -> None:
    """Store one check result; ``status`` is PASS, FAIL or SKIP."""
    _acceptance.setdefault(criterion, []).append((status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_CRITERIA + 1):
        checks = _acceptance.get(n)
        if not checks:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        statuses = {s for s, _ in checks}
        status = "FAIL" if "FAIL" in statuses else "SKIP" if statuses == {"SKIP"} else "PASS"
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {n}: {status} ({detail})")
