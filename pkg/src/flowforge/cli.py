"""Command-line entry point: ``flowforge <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .classifiers import CLASSIFIERS, ClassifierConfig, model_from_dict, train_classifier
from .dataset import (
    CATEGORICAL,
    LABEL_BINARY,
    LABEL_CATEGORY,
    LABEL_SUBCATEGORY,
    NUMERIC,
    ColumnSchema,
    LabelTask,
    TaskVariant,
    derive_labels,
    load_schema,
    save_schema,
)
from .errors import ConfigError, DataError
from .evaluate import evaluate_model
from .feature_select import DEFAULT_BINS, parse_k, select_top_k
from .ingest import ShardManifest, merge, read_csv, schema_for_input, schema_path_for, write_csv
from .partitioned import DEFAULT_PARTITIONS, PartitionedExecutor
from .preprocess import (
    PARTIAL_DATASET_ROWS,
    NormalizationParams,
    SamplingPlan,
    clean,
    default_plan,
    min_max_normalize,
    row_class_names,
    split_train_test,
    undersample,
)
from .runner import (
    ExperimentConfig,
    describe_error,
    matrix_axes,
    model_bundle_json,
    run_experiment,
    run_matrix,
)
from .synthetic import default_spec, generate_synthetic, load_spec

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

_VARIANT_OF_KIND = {
    LABEL_BINARY: TaskVariant.BINARY,
    LABEL_CATEGORY: TaskVariant.MAIN_CATEGORY,
    LABEL_SUBCATEGORY: TaskVariant.SUBCATEGORY,
}


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not argparse's default exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}: invalid JSON ({exc})") from None


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _input_schema(args):
    return schema_for_input(args.input, args.schema)


def _task_for(target: str, table) -> LabelTask:
    """``target`` names either a task variant or a label column."""
    if target in {v.value for v in TaskVariant}:
        return LabelTask.infer(target, table)
    if target not in table.columns:
        raise ConfigError(f"--target {target!r} is neither a task nor a column")
    kind = table.kind_of(target)
    if kind not in _VARIANT_OF_KIND:
        raise ConfigError(f"--target column {target!r} is not a label column")
    return LabelTask.infer(_VARIANT_OF_KIND[kind], table)


def _executor(args) -> PartitionedExecutor:
    return PartitionedExecutor(args.partitions, args.workers)


# subcommands -------------------------------------------------------------------------


def cmd_merge(args) -> int:
    manifest = ShardManifest.resolve(args.manifest)
    table = merge(manifest, load_schema(args.schema), args.out, workers=args.workers or 1)
    save_schema(table.schema, schema_path_for(args.out))
    print(f"merged {len(manifest.paths)} shards, {table.row_count} rows -> {args.out}")
    return EXIT_OK


def cmd_prep(args) -> int:
    table = read_csv(args.input, _input_schema(args))
    cleaned, info = clean(table)
    keys = row_class_names(cleaned)
    plan = None
    if not args.full_data:
        if args.plan:
            obj = _read_json(args.plan, "sampling plan")
            if not isinstance(obj, dict):
                raise ConfigError("sampling plan must be a JSON object")
            ratios = obj["ratios"] if "ratios" in obj else obj
            seed = args.seed if args.seed is not None else int(obj.get("seed", 0))
            plan = SamplingPlan(ratios, seed)
        else:
            counts = {}
            for k in keys:
                counts[k] = counts.get(k, 0) + 1
            plan = default_plan(counts, args.sample_total, args.seed or 0)
        cleaned = undersample(cleaned, plan, keys=keys)
    # indexed columns now hold integer codes, so the written schema marks them numeric
    out_schema = [ColumnSchema(c.name, NUMERIC, c.nullable) if c.kind == CATEGORICAL else c
                  for c in cleaned.schema]
    write_csv(cleaned, args.out)
    save_schema(out_schema, schema_path_for(args.out))
    kept = {}
    for k in row_class_names(cleaned):
        kept[k] = kept.get(k, 0) + 1
    report = {
        "rows_read": table.row_count,
        "rows_written": cleaned.row_count,
        "duplicates_removed": info["duplicates_removed"],
        "missing_report": info["missing_report"],
        "sampling_plan": plan.to_dict() if plan else None,
        "sampling_summary": dict(sorted(kept.items())),
        "index_maps": {m.column: m.to_dict() for m in info["index_maps"]},
    }
    if args.report:
        _write_json(args.report, report)
    print(f"{table.row_count} rows read, {info['duplicates_removed']} duplicates and "
          f"{sum(info['missing_report'].values())} incomplete rows removed, "
          f"{cleaned.row_count} rows written -> {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    table = read_csv(args.input, _input_schema(args))
    task = _task_for(args.target, table)
    table, _ = min_max_normalize(derive_labels(table, task))
    ranking, names = select_top_k(table, k=args.k, num_bins=args.bins, workers=args.workers or 1)
    if args.out_ranking:
        Path(args.out_ranking).write_text(ranking.to_json() + "\n")
    for score in ranking.scores:
        mark = "*" if score.feature in names else " "
        print(f"{mark} {score.feature:<24} chi2 {score.chi2:.6g}  dof {score.dof}")
    return EXIT_OK


def cmd_train(args) -> int:
    table = read_csv(args.input, _input_schema(args))
    task = LabelTask.infer(args.task, table)
    table = derive_labels(table, task)
    if args.holdout:
        table, test = split_train_test(table, args.train_fraction, args.seed)
        write_csv(test.select([n for n in test.names if n != "target"]), args.holdout)
        save_schema([c for c in test.schema if c.name != "target"], schema_path_for(args.holdout))
    params = _read_json(args.params, "classifier parameters") if args.params else {}
    table, norm = min_max_normalize(table)
    k = parse_k(args.k)
    features = table.feature_names
    if k != "all":
        _, features = select_top_k(table, k=k, num_bins=args.bins)
    model = train_classifier(ClassifierConfig(args.classifier, params), table, features,
                             executor=_executor(args), seed=args.seed)
    bundle = json.loads(model_bundle_json(model, norm))
    bundle["task"] = {"variant": task.variant.value, "classes": list(task.class_names)}
    Path(args.out).write_text(json.dumps(bundle, sort_keys=True, separators=(",", ":")) + "\n")
    print(f"trained {args.classifier} on {table.row_count} rows, {len(features)} features "
          f"-> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = _read_json(args.model, "model")
    model = model_from_dict(bundle)
    table = read_csv(args.input, _input_schema(args))
    if "task" in bundle:
        task = LabelTask(bundle["task"]["variant"], tuple(bundle["task"]["classes"]))
    else:
        task = LabelTask.infer(args.task, table)
    table = derive_labels(table, task)
    if "normalization" in bundle:
        norm = NormalizationParams.from_dict(bundle["normalization"])
        table, _ = min_max_normalize(table, params=norm)
    report = evaluate_model(model, table, task, {"model": str(args.model), "input": str(args.input)})
    if args.out:
        _write_json(args.out, report.to_dict())
    if args.emit_plot_data:
        Path(args.emit_plot_data).write_text(report.plot_data())
    print(report.render())
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    obj = _read_json(args.config, "config") if args.config else {}
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a JSON object")
    overrides = {
        "inputs": args.inputs, "schema": args.schema, "seed": args.seed,
        "partitions": args.partitions, "workers": args.workers, "output_dir": args.output_dir,
    }
    for key in ("task", "classifier", "feature_k", "split"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "full_data", False):
        overrides["full_data"] = True
    if args.force_selection:
        overrides["force_selection"] = True
    obj.update({k: v for k, v in overrides.items() if v is not None})
    if "inputs" not in obj:
        raise ConfigError("no input given (use --in or the config's \"inputs\")")
    return ExperimentConfig.from_dict(obj)


def cmd_run(args) -> int:
    report = run_experiment(_config_from_args(args))
    print(report.summary_text(), end="")
    return EXIT_OK


def cmd_matrix(args) -> int:
    base = _config_from_args(args)
    result = run_matrix(base, matrix_axes(base.full_data), cell_workers=args.cell_workers)
    print(result.comparison_table(), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        spec = load_spec(args.spec)
    else:
        missing = {} if args.no_missing else None
        spec = default_spec(args.seed, args.scale, missing, args.duplicates)
    table = generate_synthetic(spec, args.out)
    print(f"wrote {table.row_count} synthetic rows -> {args.out}")
    return EXIT_OK


# parser ------------------------------------------------------------------------------


def _add_exec(p) -> None:
    p.add_argument("--partitions", type=int, default=DEFAULT_PARTITIONS,
                   help="row partitions for data-parallel training (default 8)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: available cores)")


def _add_input(p, required=True) -> None:
    p.add_argument("--in", dest="input", required=required, help="input CSV")
    p.add_argument("--schema", help="schema JSON (default: <input>.schema.json or bundled)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowforge", description="Flow-record intrusion detection pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("merge", help="union CSV shards into one CSV")
    p.add_argument("--manifest", required=True, help="manifest file (one path per line) or glob")
    p.add_argument("--schema", help="schema JSON (default: bundled 5%% extract schema)")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("prep", help="index, dedup, drop incomplete rows, undersample")
    _add_input(p)
    p.add_argument("--plan", help="sampling plan JSON ({class: ratio} or {ratios, seed})")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--sample-total", type=int, default=PARTIAL_DATASET_ROWS,
                   help="target row total for the default plan")
    p.add_argument("--full-data", action="store_true", help="skip undersampling")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="preprocessing report JSON")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("select", help="rank features by chi-square")
    _add_input(p)
    p.add_argument("--target", default="binary",
                   help="task (binary, category, subcategory) or label column")
    p.add_argument("--k", default="all", help="5, 10, any positive int, or all")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out-ranking")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train one classifier and save it as JSON")
    _add_input(p)
    p.add_argument("--task", default="binary", choices=[v.value for v in TaskVariant])
    p.add_argument("--classifier", default="RF", type=str.upper, choices=CLASSIFIERS)
    p.add_argument("--k", default="all")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--params", help="classifier hyperparameters JSON")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--holdout", help="hold out a test split and write it to this CSV")
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--out", required=True, help="model JSON")
    _add_exec(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a saved model on a labelled CSV")
    p.add_argument("--model", required=True)
    _add_input(p)
    p.add_argument("--task", default="binary", choices=[v.value for v in TaskVariant],
                   help="only used when the model file carries no task")
    p.add_argument("--out", help="metrics JSON")
    p.add_argument("--emit-plot-data", help="per-class F1 CSV")
    _add_exec(p)
    p.set_defaults(func=cmd_eval)

    for name, func, text in (("run", cmd_run, "run one experiment end to end"),
                             ("matrix", cmd_matrix, "run the 27-cell (or 9-cell full-data) matrix")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="ExperimentConfig JSON")
        p.add_argument("--in", dest="inputs", action="append", help="input CSV (repeatable)")
        p.add_argument("--schema")
        p.add_argument("--seed", type=_seed, default=None)
        p.add_argument("--output-dir")
        p.add_argument("--full-data", action="store_true")
        p.add_argument("--force-selection", action="store_true",
                       help="allow feature selection in full-data mode")
        p.add_argument("--partitions", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        if name == "run":
            p.add_argument("--task", choices=[v.value for v in TaskVariant])
            p.add_argument("--classifier", type=str.upper, choices=CLASSIFIERS)
            p.add_argument("--k", dest="feature_k")
            p.add_argument("--split", choices=("holdout", "kfold"))
        else:
            p.add_argument("--cell-workers", type=int, default=1,
                           help="run matrix cells concurrently")
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="SyntheticSpec JSON (default: partial-dataset stand-in)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="multiply clean class sizes")
    p.add_argument("--duplicates", type=int, default=0)
    p.add_argument("--no-missing", action="store_true", help="inject no incomplete rows")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {describe_error(exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {describe_error(exc)}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        print(f"internal error: {describe_error(exc)}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
