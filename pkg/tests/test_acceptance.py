"""Acceptance criteria 1-9, each reported as one line in the terminal summary.

Run with ``pytest tests/test_acceptance.py -v``; the "acceptance criteria"
section at the end lists PASS, FAIL, SKIP or NOT RUN per criterion.
"""
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_table, record_acceptance
from flowforge.classifiers import ForestParams, train_decision_tree, train_naive_bayes, train_random_forest
from flowforge.classifiers.tree import gini_impurity
from flowforge.dataset import LABEL_BINARY, LabelTask, derive_labels
from flowforge.evaluate import format_percent, macro_average
from flowforge.feature_select import ContingencyTable, chi_square_statistic
from flowforge.partitioned import PartitionedExecutor
from flowforge.preprocess import (
    SamplingPlan,
    clean,
    drop_duplicates,
    drop_missing,
    index_strings,
    make_folds,
    min_max_normalize,
    round_half_up,
    train_test_indices,
    undersample,
)
from flowforge.runner import PARTIAL_AXES, ExperimentConfig, prepare_corpus, run_experiment, run_matrix
from flowforge.synthetic import default_spec, generate_synthetic

REAL_DATA_ENV = "FLOWFORGE_BOT_IOT_PATH"

# reference per-class missing-row counts, transcribed independently of the generator constant
MISSING_BY_CLASS = {
    "DDoS_TCP": 499, "DoS_HTTP": 26, "DoS_UDP": 522, "Theft_Data_Exfiltration": 4,
    "DDoS_HTTP": 30, "Theft_Keylogging": 5, "DDoS_UDP": 420,
    "Reconnaissance_OS_Fingerprint": 128, "Reconnaissance_Service_Scan": 320,
    "Normal": 471, "DoS_TCP": 378,
}


@contextmanager
def criterion(n: int, label: str):
    """Record FAIL for ``n`` if the body raises; the body records its own PASS."""
    try:
        yield
    except pytest.skip.Exception:
        raise
    except BaseException as exc:
        record_acceptance(n, "FAIL", f"{label}: {type(exc).__name__}: {exc}".splitlines()[0])
        raise


def check(n: int, ok: bool, detail: str):
    record_acceptance(n, "PASS" if ok else "FAIL", detail)
    assert ok, detail


# 1. chi-square oracle ------------------------------------------------------------------


def oracle_chi2(feature, target):
    rows, cols = sorted(set(feature)), sorted(set(target))
    n = len(feature)
    obs = {(r, c): 0 for r in rows for c in cols}
    for f, t in zip(feature, target):
        obs[(f, t)] += 1
    rt = {r: sum(obs[(r, c)] for c in cols) for r in rows}
    ct = {c: sum(obs[(r, c)] for r in rows) for c in cols}
    stat = 0.0
    for r in rows:
        for c in cols:
            e = rt[r] * ct[c] / n
            stat += (obs[(r, c)] - e) ** 2 / e
    return stat, (len(rows) - 1) * (len(cols) - 1)


def test_c1_chi_square_oracle():
    with criterion(1, "oracle"):
        rng = np.random.default_rng(2019)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 201))
            bins = int(rng.integers(1, 6))
            classes = int(rng.integers(1, 5))
            f = rng.integers(0, bins, n)
            t = rng.integers(0, classes, n)
            stat, dof = chi_square_statistic(f, t)
            want, want_dof = oracle_chi2(f.tolist(), t.tolist())
            assert dof == want_dof
            worst = max(worst, abs(stat - want))
        elapsed = time.perf_counter() - start
        check(1, worst <= 1e-9 and elapsed < 10.0,
              f"1000 datasets, max |diff| {worst:.1e} <= 1e-9, {elapsed:.2f}s < 10s")


# 2. hand-anchored values ---------------------------------------------------------------


def test_c2_hand_values():
    with criterion(2, "hand values"):
        g = gini_impurity([1, 2, 3])
        check(2, abs(g - 22 / 36) <= 1e-12, f"gini([1,2,3]) = {g!r}")
        chi, _ = ContingencyTable(np.array([[10, 20], [30, 40]])).statistic()
        check(2, abs(chi - 0.79365) <= 1e-6 and abs(chi - 50 / 63) <= 1e-6,
              f"chi2([[10,20],[30,40]]) = {chi:.6f}")
        t = make_table(numeric={"a": [1, 1, 0, 0], "b": [0, 0, 1, 1]},
                       labels={LABEL_BINARY: ("label", ["attack", "attack", "normal", "normal"])})
        t = derive_labels(t, LabelTask.binary())
        m = train_naive_bayes(t)
        theta = np.asarray(m.log_likelihoods)
        # the class whose rows carry feature "a" puts 3/4 of its mass there
        a_class = t.target_names.index("attack")
        want = np.log([[0.75, 0.25] if c == a_class else [0.25, 0.75] for c in range(2)])
        err = float(np.abs(theta - want).max())
        check(2, err <= 1e-12, f"NB log theta error {err:.1e}")


# 3. percentage arithmetic --------------------------------------------------------------


def test_c3_macro_percent():
    with criterion(3, "percent"):
        shown = (format_percent(0.999), format_percent(0.994), format_percent(macro_average([0.999, 0.994])))
        check(3, shown == ("99.9%", "99.4%", "99.7%"), f"per-class and macro shown as {shown}")


# 4. missing-record replay --------------------------------------------------------------


def test_c4_missing_record_replay():
    with criterion(4, "replay"):
        spec = default_spec(seed=11, missing=MISSING_BY_CLASS)
        raw, _ = index_strings(generate_synthetic(spec))
        raw, _ = drop_duplicates(raw)
        kept, report = drop_missing(raw)
        total = sum(report.values())
        check(4, report == MISSING_BY_CLASS and total == 2803,
              f"{len(report)} classes match cell for cell, total {total}")
        assert kept.row_count == sum(c.rows for c in spec.classes)


# 5. partition invariance ---------------------------------------------------------------


def test_c5_partition_invariance():
    with criterion(5, "invariance"):
        spec = default_spec(seed=5, scale=10_000 / 32_268, missing={})
        table, _ = clean(generate_synthetic(spec))
        table = derive_labels(table, LabelTask.binary())
        assert 9_990 <= table.row_count <= 10_010
        start = time.perf_counter()
        dt, rf = set(), set()
        for n in (1, 2, 8):
            ex = PartitionedExecutor(n, 1)
            dt.add(train_decision_tree(table, executor=ex).to_json().encode())
            rf.add(train_random_forest(table, params=ForestParams(seed=3), executor=ex).to_json().encode())
        elapsed = time.perf_counter() - start
        check(5, len(dt) == 1 and len(rf) == 1 and elapsed < 60.0,
              f"{table.row_count} rows, DT and RF bytes equal at 1/2/8 partitions, {elapsed:.1f}s < 60s")


# 6 and 7. determinism and ordering on the partial-scale corpus --------------------------


@pytest.fixture(scope="module")
def partial_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("partial") / "partial.csv"
    generate_synthetic(default_spec(seed=2019, duplicates=40), path)
    return path


@pytest.fixture(scope="module")
def first_matrix(partial_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix-a")
    base = ExperimentConfig((str(partial_corpus),), seed=7, partitions=4, output_dir=str(out))
    start = time.perf_counter()
    result = run_matrix(base, PARTIAL_AXES)
    return result, out, time.perf_counter() - start


def test_c6_matrix_determinism(partial_corpus, first_matrix, tmp_path):
    with criterion(6, "determinism"):
        corpus = prepare_corpus(ExperimentConfig((str(partial_corpus),), seed=7))
        normal = corpus.sampling_summary["Normal"]
        attack = sum(corpus.sampling_summary.values()) - normal
        assert (attack, normal) == (29_507, 2_761)
        first, out_a, t_a = first_matrix
        base = ExperimentConfig((str(partial_corpus),), seed=7, partitions=4, output_dir=str(out_a))
        start = time.perf_counter()
        second = run_matrix(base.replace(output_dir=str(tmp_path / "b")), PARTIAL_AXES)
        t_b = time.perf_counter() - start
        errors = [c.error for c in first.cells + second.cells if c.error]
        same = first.metrics_json().encode() == second.metrics_json().encode()
        same_files = (out_a / "matrix.json").read_bytes() == (tmp_path / "b" / "matrix.json").read_bytes()
        check(6, len(first.cells) == 27 and not errors and same and same_files and t_a + t_b < 600,
              f"{attack}+{normal} rows, 27 cells x2 byte-identical, {t_a:.1f}s + {t_b:.1f}s < 600s")


def test_c7_classifier_ordering(first_matrix):
    with criterion(7, "ordering"):
        result = first_matrix[0]
        scores = {}
        for cell in result.cells:
            if cell.settings["task"] == "binary":
                scores[(cell.settings["feature_k"], cell.settings["classifier"])] = cell.report.macro_f1
        parts = []
        ok = True
        for k in sorted({k for k, _ in scores}, key=str):
            dt, rf, nb = scores[(k, "DT")], scores[(k, "RF")], scores[(k, "NB")]
            ok &= dt >= 0.95 and rf >= 0.95 and nb < min(dt, rf)
            parts.append(f"k={k}: DT {dt:.3f} RF {rf:.3f} NB {nb:.3f}")
        check(7, ok and len(parts) == 3, "; ".join(parts))


# 8. preprocessing properties -----------------------------------------------------------


small_tables = st.integers(0, 2**32 - 1).flatmap(
    lambda seed: st.tuples(st.just(seed), st.integers(2, 120), st.integers(1, 4)))


def random_table(seed, n, n_classes, repeat_rows=True):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 4, (n, 3)).astype(float)
    if repeat_rows and n > 3:
        base[n // 2:] = base[: n - n // 2]
    labels = np.asarray([f"c{i}" for i in rng.integers(0, n_classes, n)], dtype=object)
    return make_table(numeric={f"f{j}": base[:, j] for j in range(3)},
                      categorical={"proto": rng.choice(["tcp", "udp"], n).astype(object)},
                      labels={LABEL_BINARY: ("label", labels)})


@settings(max_examples=100, deadline=None)
@given(small_tables)
def _dedup(case):
    seed, n, _ = case
    t, _ = index_strings(random_table(seed, n, 2))
    once, _ = drop_duplicates(t)
    twice, removed = drop_duplicates(once)
    assert removed == 0 and twice.equals(once)


@settings(max_examples=100, deadline=None)
@given(small_tables)
def _normalize(case):
    seed, n, _ = case
    t, _ = index_strings(random_table(seed, n, 2, repeat_rows=False))
    out, params = min_max_normalize(t)
    for name in t.feature_names:
        before, after = t.column(name), out.column(name)
        if before.min() < before.max():
            assert after[np.argmin(before)] == 0.0 and after[np.argmax(before)] == 1.0
            assert after.min() == 0.0 and after.max() == 1.0


@settings(max_examples=100, deadline=None)
@given(small_tables, st.floats(0.01, 1.0))
def _undersample(case, ratio):
    seed, n, n_classes = case
    t = random_table(seed, n, n_classes)
    labels = t.column("label")
    names = sorted(set(labels.tolist()))
    ratios = {c: ratio if i % 2 == 0 else 1.0 for i, c in enumerate(names)}
    out = undersample(t, SamplingPlan(ratios, seed), by="label")
    got = out.column("label").tolist()
    for c in names:
        assert got.count(c) == round_half_up(ratios[c] * int((labels == c).sum()))


def _binary_target(seed, n):
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.3, "normal", "attack").astype(object)
    t = make_table(numeric={"f": rng.random(n)}, labels={LABEL_BINARY: ("label", labels)})
    return derive_labels(t, LabelTask.binary())


@settings(max_examples=100, deadline=None)
@given(small_tables, st.integers(2, 10), st.booleans())
def _folds(case, k, stratified):
    seed, n, _ = case
    t = _binary_target(seed, n)
    if k > n:
        return
    folds = make_folds(t, k, seed, stratified)
    tests = [folds.test_indices(i) for i in range(k)]
    joined = np.sort(np.concatenate(tests))
    assert (joined == np.arange(n)).all()  # exhaustive and disjoint
    assert max(folds.sizes) - min(folds.sizes) <= 1


@settings(max_examples=100, deadline=None)
@given(small_tables, st.booleans())
def _split(case, stratified):
    seed, n, _ = case
    t = _binary_target(seed, n)
    train, test = train_test_indices(t, 0.7, seed, stratified)
    assert len(np.intersect1d(train, test)) == 0 and len(train) + len(test) == n
    if stratified:
        y = t.column("target")
        sizes = [round_half_up(0.7 * int((y == c).sum())) for c in np.unique(y)]
        want = sum(sizes)
        if want in (0, n):
            want += 1 if want == 0 else -1
    else:
        want = min(max(round_half_up(0.7 * n), 1), n - 1)
    assert len(train) == want


PROPERTIES = {
    "dedup idempotent": _dedup,
    "min->0 max->1": _normalize,
    "undersample counts exact": _undersample,
    "folds disjoint, exhaustive, sizes within 1": _folds,
    "70/30 sizes exact": _split,
}


@pytest.mark.parametrize("name", list(PROPERTIES))
def test_c8_preprocessing_properties(name):
    with criterion(8, name):
        PROPERTIES[name]()
        check(8, True, name)


# 9. optional real-data integration -----------------------------------------------------


def _real_inputs(path: Path) -> tuple[str, ...]:
    if path.is_dir():
        return tuple(str(p) for p in sorted(path.glob("*.csv")))
    return (str(path),)


def test_c9_real_extract(tmp_path):
    raw = os.environ.get(REAL_DATA_ENV)
    if not raw or not Path(raw).exists():
        record_acceptance(9, "SKIP", f"{REAL_DATA_ENV} not set to an existing file or directory")
        pytest.skip("real 5% extract not supplied")
    with criterion(9, "real extract"):
        inputs = _real_inputs(Path(raw))
        cfg = ExperimentConfig(inputs, task="binary", classifier="RF", feature_k=10, seed=0,
                               partitions=4, output_dir=str(tmp_path / "real"))
        report = run_experiment(cfg)
        f1 = report.macro_f1
        check(9, f1 >= 0.99, f"binary RF top-10 macro-F1 {f1:.4f} >= 0.99 on {len(inputs)} file(s)")
