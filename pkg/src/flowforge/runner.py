"""Experiment orchestration: single runs, test matrices and run reports.

A run follows the fixed stage order ingest, preprocess (index, dedup,
missing, undersample), label, split, normalise, select, train, evaluate.
Every report echoes the configuration that produced it.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .classifiers import CLASSIFIERS, ClassifierConfig, ClassifierModel
from .dataset import FlowTable, LabelTask, TaskVariant, derive_labels
from .errors import ConfigError, FlowForgeError
from .evaluate import (
    CrossValidationReport,
    MetricsReport,
    cross_validate,
    format_percent,
    train_and_evaluate,
)
from .feature_select import ALL, DEFAULT_BINS, parse_k
from .ingest import ShardManifest, schema_for_input, union_shards
from .partitioned import DEFAULT_PARTITIONS, PartitionedExecutor
from .preprocess import (
    DEFAULT_FOLDS,
    DEFAULT_TRAIN_FRACTION,
    PARTIAL_DATASET_ROWS,
    NormalizationParams,
    SamplingPlan,
    clean,
    default_plan,
    make_folds,
    row_class_names,
    split_train_test,
    undersample,
)

log = logging.getLogger(__name__)

SEED_ENV = "FLOWFORGE_SEED"
SPLIT_MODES = ("holdout", "kfold")
TASKS = tuple(v.value for v in TaskVariant)
FEATURE_SETS = (5, 10, ALL)

PARTIAL_AXES = {"task": TASKS, "classifier": CLASSIFIERS, "feature_k": FEATURE_SETS}
FULL_AXES = {"task": TASKS, "classifier": CLASSIFIERS}

# fields that change how a run executes but never what it computes
_RUNTIME_FIELDS = ("output_dir", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``sampling`` holds explicit per-class keep ratios; when ``None`` and
    ``full_data`` is off, the default plan caps classes so about
    ``sample_total`` rows remain.  ``full_data`` skips undersampling and
    requires ``feature_k = all`` unless ``force_selection`` is set.
    """

    inputs: tuple[str, ...]
    schema: str | None = None
    task: str = "binary"
    classifier: str = "RF"
    feature_k: int | str = ALL
    sampling: Mapping[str, float] | None = None
    full_data: bool = False
    sample_total: int = PARTIAL_DATASET_ROWS
    seed: int = 0
    split: str = "holdout"
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    folds: int = DEFAULT_FOLDS
    stratified: bool = True
    partitions: int = DEFAULT_PARTITIONS
    workers: int | None = None
    num_bins: int = DEFAULT_BINS
    classifier_params: Mapping[str, Any] = field(default_factory=dict)
    force_selection: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        inputs = (self.inputs,) if isinstance(self.inputs, (str, Path)) else self.inputs
        object.__setattr__(self, "inputs", tuple(str(p) for p in inputs))
        if not self.inputs:
            raise ConfigError("at least one input path is required")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        object.__setattr__(self, "classifier", ClassifierConfig(self.classifier).name)
        object.__setattr__(self, "feature_k", parse_k(self.feature_k))
        object.__setattr__(self, "classifier_params", dict(self.classifier_params))
        if self.sampling is not None:
            object.__setattr__(self, "sampling", {str(k): float(v) for k, v in self.sampling.items()})
            SamplingPlan(self.sampling, self.seed)
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"split must be one of {SPLIT_MODES}, got {self.split!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.partitions < 1:
            raise ConfigError("partitions must be at least 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.num_bins < 1:
            raise ConfigError("num_bins must be at least 1")
        if self.sample_total < 1:
            raise ConfigError("sample_total must be positive")
        if self.full_data and self.feature_k != ALL and not self.force_selection:
            raise ConfigError("full-data runs use all features; pass force_selection to override")
        if self.full_data and self.sampling is not None:
            raise ConfigError("full-data runs do not undersample; drop the sampling plan")

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["inputs"] = list(self.inputs)
        return d

    def identity(self) -> dict:
        """The fields that determine results (runtime-only fields removed)."""
        d = self.to_dict()
        for k in _RUNTIME_FIELDS:
            d.pop(k)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_env(self, environ: Mapping[str, str] | None = None) -> "ExperimentConfig":
        """Apply the ``FLOWFORGE_SEED`` override when it is set."""
        environ = os.environ if environ is None else environ
        raw = environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
        if seed < 0:
            raise ConfigError(f"{SEED_ENV} must be non-negative")
        return self.replace(seed=seed)

    def executor(self) -> PartitionedExecutor:
        return PartitionedExecutor(self.partitions, self.workers)


# stage bookkeeping -------------------------------------------------------------------


class StageTimer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        except Exception as exc:
            if getattr(exc, "stage", None) is None:
                exc.stage = name
            raise
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


def describe_error(exc: BaseException) -> str:
    stage = getattr(exc, "stage", None)
    prefix = f"stage {stage}: " if stage else ""
    return f"{prefix}{type(exc).__name__}: {exc}"


# corpus preparation ------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedCorpus:
    """Cleaned (and possibly undersampled) table plus what cleaning did."""

    table: FlowTable
    duplicates_removed: int
    missing_report: Mapping[str, int]
    sampling_plan: SamplingPlan | None
    sampling_summary: Mapping[str, int]
    rows_read: int
    timings: Mapping[str, float]


def _corpus_key(config: ExperimentConfig) -> str:
    keys = ("inputs", "schema", "sampling", "full_data", "sample_total", "seed")
    return json.dumps({k: config.to_dict()[k] for k in keys}, sort_keys=True)


def _count(keys) -> dict[str, int]:
    counts: dict[str, int] = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    return dict(sorted(counts.items()))


def prepare_corpus(config: ExperimentConfig) -> PreparedCorpus:
    timer = StageTimer()
    with timer.stage("ingest"):
        manifest = ShardManifest(tuple(config.inputs)) if len(config.inputs) > 1 \
            else ShardManifest.resolve(config.inputs[0])
        schema = schema_for_input(manifest.paths[0], config.schema)
        raw = union_shards(manifest, schema, workers=config.workers or 1)
    with timer.stage("preprocess"):
        table, info = clean(raw)
        plan = None
        if not config.full_data:
            keys = row_class_names(table)
            if config.sampling is not None:
                plan = SamplingPlan(config.sampling, config.seed)
            else:
                plan = default_plan(_count(keys), config.sample_total, config.seed)
            table = undersample(table, plan, keys=keys)
        summary = _count(row_class_names(table))
    return PreparedCorpus(table, info["duplicates_removed"], info["missing_report"], plan,
                          summary, raw.row_count, timer.timings)


# single runs -------------------------------------------------------------------------


@dataclass(frozen=True)
class RunReport:
    config: ExperimentConfig
    task: LabelTask
    rows_read: int
    duplicates_removed: int
    missing_report: Mapping[str, int]
    sampling_plan: SamplingPlan | None
    sampling_summary: Mapping[str, int]
    metrics: MetricsReport | CrossValidationReport
    features: tuple[str, ...] = ()
    ranking: list | None = None
    model: ClassifierModel | None = None
    normalization: NormalizationParams | None = None
    timings: Mapping[str, float] = field(default_factory=dict)

    @property
    def macro_f1(self) -> float:
        if isinstance(self.metrics, CrossValidationReport):
            return self.metrics.summary["macro_f1"]["mean"]
        return self.metrics.macro_f1

    def results(self) -> dict:
        """Everything except timings and runtime-only settings: stable across reruns."""
        return {
            "config": self.config.identity(),
            "task": {"variant": self.task.variant.value, "classes": list(self.task.class_names)},
            "rows_read": self.rows_read,
            "duplicates_removed": self.duplicates_removed,
            "missing_report": dict(self.missing_report),
            "sampling_plan": self.sampling_plan.to_dict() if self.sampling_plan else None,
            "sampling_summary": dict(self.sampling_summary),
            "features": list(self.features),
            "ranking": self.ranking,
            "metrics": self.metrics.to_dict(),
        }

    def metrics_json(self) -> str:
        return json.dumps(self.results(), sort_keys=True, indent=2) + "\n"

    def to_dict(self) -> dict:
        d = self.results()
        d["config"] = self.config.to_dict()
        d["timings"] = dict(self.timings)
        return d

    def summary_text(self) -> str:
        c = self.config
        lines = [f"task {c.task}  classifier {c.classifier}  features {c.feature_k}  "
                 f"split {c.split}  seed {c.seed}",
                 f"rows read {self.rows_read}  duplicates removed {self.duplicates_removed}  "
                 f"incomplete rows removed {sum(self.missing_report.values())}"]
        if isinstance(self.metrics, CrossValidationReport):
            s = self.metrics.summary
            lines.append(f"{c.folds}-fold macro f1 {format_percent(s['macro_f1']['mean'])} "
                         f"(std {format_percent(s['macro_f1']['std'])})")
            for name in self.task.class_names:
                lines.append(f"  {name}: f1 {format_percent(s[f'f1[{name}]']['mean'])}")
        else:
            lines.append(self.metrics.render())
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(self.metrics_json())
        (out / "report.json").write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        (out / "summary.txt").write_text(self.summary_text())
        if self.model is not None:
            (out / "model.json").write_text(model_bundle_json(self.model, self.normalization))
        return out


def model_bundle_json(model: ClassifierModel, normalization: NormalizationParams | None) -> str:
    """Model JSON with the normalisation fitted alongside it, for standalone scoring."""
    obj = model.to_dict()
    if normalization is not None:
        obj["normalization"] = normalization.to_dict()
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_experiment(config: ExperimentConfig, corpus: PreparedCorpus | None = None,
                   apply_env: bool = True) -> RunReport:
    """Run the whole pipeline for ``config``; writes reports when ``output_dir`` is set.

    A prepared corpus may be passed in to skip ingest and cleaning (the matrix
    runner shares one across cells).  Errors carry a ``stage`` attribute.
    """
    if apply_env:
        config = config.with_env()
    if corpus is None:
        corpus = prepare_corpus(config)
    timer = StageTimer()
    timer.timings.update(corpus.timings)
    executor = config.executor()
    classifier = ClassifierConfig(config.classifier, config.classifier_params)
    with timer.stage("label"):
        task = LabelTask.infer(config.task, corpus.table)
        table = derive_labels(corpus.table, task)
    meta = {"task": config.task, "classifier": config.classifier,
            "feature_k": config.feature_k, "split": config.split}
    model = normalization = ranking = None
    features: tuple[str, ...] = ()
    if config.split == "holdout":
        with timer.stage("split"):
            train, test = split_train_test(table, config.train_fraction, config.seed,
                                           config.stratified)
        with timer.stage("train+evaluate"):
            run = train_and_evaluate(train, test, task, classifier, config.feature_k,
                                     config.num_bins, executor, config.seed,
                                     select=config.feature_k != ALL, metadata=meta)
        metrics, model, normalization = run.report, run.model, run.normalization
        features = run.features
        ranking = run.ranking.to_list() if run.ranking else None
    else:
        with timer.stage("split"):
            folds = make_folds(table, config.folds, config.seed, config.stratified)
        with timer.stage("train+evaluate"):
            metrics = cross_validate(table, task, classifier, folds, config.feature_k,
                                     config.num_bins, executor, config.seed, meta)
    report = RunReport(config, task, corpus.rows_read, corpus.duplicates_removed,
                       corpus.missing_report, corpus.sampling_plan, corpus.sampling_summary,
                       metrics, features, ranking, model, normalization, timer.timings)
    if config.output_dir:
        report.write(config.output_dir)
    return report


# matrices ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    settings: Mapping[str, Any]
    report: RunReport | None = None
    error: str | None = None

    @property
    def label(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.settings.items()) or "base"

    def to_dict(self) -> dict:
        return {
            "settings": dict(self.settings),
            "macro_f1": self.report.macro_f1 if self.report else None,
            "error": self.error,
            "results": self.report.results() if self.report else None,
        }


@dataclass(frozen=True)
class MatrixResult:
    base: ExperimentConfig
    cells: tuple[MatrixCell, ...]

    def best_by_task(self) -> dict[str, int]:
        """Index of the highest macro-F1 cell per task (first one wins a tie)."""
        return best_by_task(self.cells, self.base.task)

    def comparison_table(self) -> str:
        return comparison_table(self.cells, self.base.task)

    def metrics_json(self) -> str:
        obj = {"base": self.base.identity(), "cells": [c.to_dict() for c in self.cells],
               "best": best_by_task(self.cells, self.base.task)}
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.json").write_text(self.metrics_json())
        (out / "comparison.txt").write_text(self.comparison_table())
        return out


def best_by_task(cells: Sequence[MatrixCell], default_task: str = "binary") -> dict[str, int]:
    best: dict[str, int] = {}
    for i, cell in enumerate(cells):
        if cell.report is None:
            continue
        task = str(cell.settings.get("task", default_task))
        if task not in best or cell.report.macro_f1 > cells[best[task]].report.macro_f1:
            best[task] = i
    return best


def comparison_table(cells: Sequence[MatrixCell], default_task: str = "binary") -> str:
    """One row per scenario with its macro F1; ``*`` marks the best cell per task."""
    best = set(best_by_task(cells, default_task).values())
    width = max([len(c.label) for c in cells] + [8])
    lines = [f"{'scenario':<{width}}  macro f1"]
    for i, cell in enumerate(cells):
        if cell.report is None:
            value = f"failed ({cell.error})"
        else:
            value = format_percent(cell.report.macro_f1) + (" *" if i in best else "")
        lines.append(f"{cell.label:<{width}}  {value}")
    return "\n".join(lines) + "\n"


def _cell_dir(base: str | None, settings: Mapping[str, Any]) -> str | None:
    if not base:
        return None
    name = "_".join(f"{k}-{v}" for k, v in settings.items()) or "base"
    return str(Path(base) / name)


def run_matrix(base: ExperimentConfig, axes: Mapping[str, Sequence[Any]] | None = None,
               cell_workers: int = 1) -> MatrixResult:
    """Run every combination of ``axes`` values over ``base``.

    Cells run in axis order (first axis outermost).  A failing cell is
    recorded with its error and the remaining cells still run.  Cells that
    share inputs and sampling settings reuse one prepared corpus.
    ``cell_workers > 1`` runs cells concurrently; results keep cell order.
    """
    base = base.with_env()
    axes = dict(axes or {})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    bad = sorted(set(axes) - known)
    if bad:
        raise ConfigError(f"unknown matrix axes {bad}")
    names = list(axes)
    combos = [dict(zip(names, values)) for values in itertools.product(*(axes[n] for n in names))]
    corpora: dict[str, PreparedCorpus | BaseException] = {}

    def corpus_for(config):
        key = _corpus_key(config)
        if key not in corpora:
            try:
                corpora[key] = prepare_corpus(config)
            except Exception as exc:  # recorded per cell
                corpora[key] = exc
        return corpora[key]

    configs: list[ExperimentConfig | BaseException] = []
    for settings in combos:
        try:
            cfg = base.replace(**settings, output_dir=_cell_dir(base.output_dir, settings))
            configs.append(cfg)
        except ConfigError as exc:
            configs.append(exc)
    # corpora are prepared up front so concurrent cells never race on the cache
    for cfg in configs:
        if isinstance(cfg, ExperimentConfig):
            corpus_for(cfg)

    def run_cell(i):
        settings, cfg = combos[i], configs[i]
        if isinstance(cfg, BaseException):
            return MatrixCell(settings, error=describe_error(cfg))
        corpus = corpus_for(cfg)
        if isinstance(corpus, BaseException):
            return MatrixCell(settings, error=describe_error(corpus))
        try:
            return MatrixCell(settings, run_experiment(cfg, corpus, apply_env=False))
        except Exception as exc:
            log.warning("matrix cell %s failed: %s", settings, describe_error(exc))
            return MatrixCell(settings, error=describe_error(exc))

    if cell_workers > 1:
        with ThreadPoolExecutor(cell_workers) as pool:
            cells = list(pool.map(run_cell, range(len(combos))))
    else:
        cells = [run_cell(i) for i in range(len(combos))]
    result = MatrixResult(base, tuple(cells))
    if base.output_dir:
        result.write(base.output_dir)
    return result


def matrix_axes(full_data: bool) -> dict[str, tuple]:
    """The standard 27-cell partial matrix or the 9-cell full-data matrix."""
    return dict(FULL_AXES if full_data else PARTIAL_AXES)


__all__ = [
    "ExperimentConfig", "FULL_AXES", "FlowForgeError", "MatrixCell", "MatrixResult", "PARTIAL_AXES",
    "PreparedCorpus", "RunReport", "SEED_ENV", "comparison_table", "describe_error", "matrix_axes",
    "model_bundle_json", "prepare_corpus", "run_experiment", "run_matrix",
]
