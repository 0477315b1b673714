import json

import pytest

from flowforge.errors import ConfigError, DataError
from flowforge.runner import (
    FULL_AXES,
    PARTIAL_AXES,
    ExperimentConfig,
    MatrixCell,
    comparison_table,
    matrix_axes,
    prepare_corpus,
    run_experiment,
    run_matrix,
)


@pytest.fixture
def base(small_corpus, tmp_path):
    path, _ = small_corpus
    return ExperimentConfig((str(path),), partitions=2, workers=1,
                            classifier_params={}, output_dir=str(tmp_path / "out"))


def test_config_validation(small_corpus):
    path = str(small_corpus[0])
    with pytest.raises(ConfigError):
        ExperimentConfig(())
    with pytest.raises(ConfigError):
        ExperimentConfig((path,), task="ternary")
    with pytest.raises(ConfigError):
        ExperimentConfig((path,), classifier="SVM")
    with pytest.raises(ConfigError):
        ExperimentConfig((path,), split="bootstrap")
    with pytest.raises(ConfigError):
        ExperimentConfig((path,), full_data=True, feature_k=5)
    assert ExperimentConfig((path,), full_data=True, feature_k=5, force_selection=True).feature_k == 5
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"inputs": [path], "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig((path,), sampling={"Normal": 1.5})
    assert ExperimentConfig(path).inputs == (path,)


def test_config_round_trip(tmp_path, small_corpus):
    cfg = ExperimentConfig((str(small_corpus[0]),), classifier="nb", feature_k="10", seed=4)
    assert cfg.classifier == "NB" and cfg.feature_k == 10
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")


def test_seed_env_override(small_corpus):
    cfg = ExperimentConfig((str(small_corpus[0]),), seed=1)
    assert cfg.with_env({"FLOWFORGE_SEED": "42"}).seed == 42
    assert cfg.with_env({}).seed == 1
    with pytest.raises(ConfigError):
        cfg.with_env({"FLOWFORGE_SEED": "x"})


def test_prepare_corpus(base):
    corpus = prepare_corpus(base)
    assert corpus.duplicates_removed == 5
    assert sum(corpus.missing_report.values()) == 2803
    assert sum(corpus.sampling_summary.values()) == corpus.table.row_count
    assert set(corpus.timings) == {"ingest", "preprocess"}
    full = prepare_corpus(base.replace(full_data=True))
    assert full.sampling_plan is None
    assert full.table.row_count >= corpus.table.row_count


def test_run_writes_reports(base, tmp_path):
    report = run_experiment(base.replace(classifier="DT", feature_k=5))
    out = tmp_path / "out"
    for name in ("metrics.json", "report.json", "summary.txt", "model.json"):
        assert (out / name).is_file()
    full = json.loads((out / "report.json").read_text())
    assert set(full["timings"]) >= {"ingest", "preprocess", "label", "split", "train+evaluate"}
    assert full["config"]["classifier"] == "DT"
    assert len(full["ranking"]) == 19 and len(full["features"]) == 5
    metrics = json.loads((out / "metrics.json").read_text())
    assert "timings" not in metrics and "output_dir" not in metrics["config"]
    assert report.macro_f1 > 0.9
    model = json.loads((out / "model.json").read_text())
    assert model["type"] == "tree" and "normalization" in model


def test_run_is_deterministic(base):
    a = run_experiment(base.replace(output_dir=None, classifier="RF"))
    b = run_experiment(base.replace(output_dir=None, classifier="RF", workers=3, partitions=2))
    assert a.metrics_json() == b.metrics_json()


def test_kfold_run(base):
    r = run_experiment(base.replace(output_dir=None, classifier="NB", split="kfold", folds=3))
    assert len(r.metrics.folds) == 3
    assert r.model is None
    assert "3-fold macro f1" in r.summary_text()


def test_stage_errors_name_the_stage(base, tmp_path):
    with pytest.raises(DataError) as err:
        run_experiment(base.replace(inputs=(str(tmp_path / "missing*.csv"),)))
    assert err.value.stage == "ingest"
    with pytest.raises(ConfigError) as err:
        run_experiment(base.replace(sampling={"Normal": 1.0}, output_dir=None))
    assert err.value.stage == "preprocess"


def test_axes():
    assert len(PARTIAL_AXES) == 3
    n = 1
    for v in PARTIAL_AXES.values():
        n *= len(v)
    assert n == 27
    assert len(FULL_AXES["task"]) * len(FULL_AXES["classifier"]) == 9
    assert matrix_axes(True) == FULL_AXES


def test_empty_axes_single_run(base):
    result = run_matrix(base.replace(output_dir=None, classifier="DT"), {})
    assert len(result.cells) == 1 and result.cells[0].report is not None


def test_matrix_records_failures_and_continues(base, tmp_path):
    axes = {"classifier": ["DT", "NB"], "feature_k": [5, 50]}
    result = run_matrix(base, axes)
    assert len(result.cells) == 4
    failed = [c for c in result.cells if c.error]
    assert [c.settings["feature_k"] for c in failed] == [50, 50]
    assert "stage train+evaluate" in failed[0].error
    table = result.comparison_table()
    assert "failed" in table and table.count("*") == 1
    out = tmp_path / "out"
    assert (out / "matrix.json").is_file() and (out / "comparison.txt").is_file()
    assert (out / "classifier-DT_feature_k-5" / "metrics.json").is_file()


def test_matrix_bad_axis(base):
    with pytest.raises(ConfigError):
        run_matrix(base, {"colour": ["red"]})
    result = run_matrix(base.replace(output_dir=None), {"classifier": ["DT", "XX"]})
    assert result.cells[1].error and "ConfigError" in result.cells[1].error


def test_matrix_parallel_matches_sequential(base):
    axes = {"classifier": ["DT", "NB"], "task": ["binary", "category"]}
    seq = run_matrix(base.replace(output_dir=None), axes)
    par = run_matrix(base.replace(output_dir=None), axes, cell_workers=3)
    assert seq.metrics_json() == par.metrics_json()


def test_comparison_table_is_pure(base):
    result = run_matrix(base.replace(output_dir=None), {"classifier": ["DT", "NB"]})
    assert comparison_table(result.cells) == result.comparison_table()
    best = result.best_by_task()
    assert result.cells[best["binary"]].settings["classifier"] == "DT"
    assert comparison_table([MatrixCell({"x": 1}, error="boom")]).count("failed") == 1
