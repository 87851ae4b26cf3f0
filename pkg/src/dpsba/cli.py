"""Command-line entry point for the experiment laboratory.

Exit codes: 0 success, 1 configuration error (the offending key or flag is
named on stderr), 2 runtime failure (the failing stage was persisted as a
failure record when one was reachable).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evaluation, experiment, neuralnet, plots
from .experiment import ConfigError, ExperimentConfig
from .graphcore import (
    atomic_write_text,
    generate_synthetic,
    parse_tudataset,
    save_dataset,
    split_dataset,
)


class _Parser(argparse.ArgumentParser):
    """Argparse variant that reports usage problems as config errors."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a YAML/JSON config document")
    parser.add_argument("--seed", help="comma-separated seed list, e.g. 1,2,3")
    parser.add_argument("--out", help="output directory for reports and figures")
    parser.add_argument("--method", help=f"attack method, one of {', '.join(experiment.METHODS)}")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, repeatable; dotted section prefixes allowed",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="dpsba", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="materialize a dataset file")
    dsub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_parse = dsub.add_parser("parse", help="parse a TUDataset-format directory")
    p_parse.add_argument("directory", nargs="?", help="dataset directory")
    p_parse.add_argument("--name", help="dataset file prefix inside the directory")
    _add_common(p_parse)
    p_synth = dsub.add_parser("synth", help="generate the synthetic two-class set")
    _add_common(p_synth)

    for name, help_text in (
        ("train", "train a clean classifier and report its accuracy"),
        ("attack", "run the configured attack and persist metrics"),
        ("evaluate", "attack plus detectability verification"),
        ("defend", "attack plus a defense re-run"),
        ("theory", "standalone verification of the detectability bounds"),
        ("sweep", "re-run the experiment across a parameter grid"),
        ("plot", "emit figures from persisted reports"),
        ("report", "recompute the aggregate table from persisted reports"),
    ):
        _add_common(sub.add_parser(name, help=help_text))

    return parser


def _build_config(args) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = experiment.load_config(path)
    else:
        config = ExperimentConfig()
    overrides = []
    if args.method is not None:
        overrides.append(f"method={args.method}")
    if args.seed is not None:
        overrides.append(f"seeds={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    overrides.extend(args.override)
    if overrides:
        config = experiment.apply_overrides(config, overrides)
    else:
        config.validate()
    return config


def _print_run_lines(records: list[dict]) -> None:
    for rec in records:
        m = rec.get("metrics")
        if m is None:
            print(f"{rec['method']} seed {rec['seed']}: FAILED at {rec.get('failed_stage')}")
            continue
        print(
            f"{m['method']} seed {m['seed']}: "
            f"asr={m['asr']:.4f} cad={m['cad']:.4f} auc={m['auc']:.4f}"
        )


def _cmd_dataset(args) -> int:
    config = _build_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.dataset_command == "parse":
        directory = args.directory or config.dataset_path
        name = args.name or config.dataset_name
        if directory is None or name is None:
            raise ConfigError("dataset parse needs a directory and --name (or config keys)")
        dataset = parse_tudataset(directory, name, standardize=config.standardize_features)
    else:
        dataset = generate_synthetic(config.synthetic_per_class, config.synthetic_seed)
    dataset = split_dataset(dataset, config.train_fraction, config.split_seed)
    path = out_dir / f"{dataset.name}.json"
    save_dataset(dataset, path)
    print(
        f"wrote {path} ({len(dataset.graphs)} graphs, {dataset.num_classes} classes, "
        f"feature dim {dataset.feature_dim}, target label {dataset.target_label})"
    )
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = experiment.build_dataset(config)
    seed = config.seeds[0]
    model = neuralnet.train_classifier(
        dataset,
        config.surrogate_arch,
        neuralnet.TrainConfig(
            learning_rate=config.learning_rate,
            epochs=config.victim_epochs,
            batch_size=config.batch_size,
            seed=seed,
        ),
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
    )
    model_path = out_dir / f"model_{config.surrogate_arch}_{seed}.json"
    neuralnet.save_model(model, model_path)
    record = {
        "architecture": config.surrogate_arch,
        "seed": seed,
        "dataset": dataset.name,
        "clean_test_accuracy": model.meta.get("clean_test_accuracy"),
        "final_train_loss": model.meta.get("final_train_loss"),
        "model_file": model_path.name,
    }
    atomic_write_text(
        out_dir / f"train_report_{config.surrogate_arch}_{seed}.json",
        json.dumps(record, sort_keys=True, indent=1) + "\n",
    )
    print(
        f"trained {config.surrogate_arch} (seed {seed}): "
        f"clean test accuracy {record['clean_test_accuracy']:.4f}"
    )
    return 0


def _cmd_pipeline(args, *, defense: str, theory_flag: bool) -> int:
    config = _build_config(args)
    if defense == "off":
        config = dataclasses.replace(config, defense=None)
    elif defense == "force" and config.defense is None:
        config = dataclasses.replace(config, defense="subsample")
    config = dataclasses.replace(config, run_theory=theory_flag)
    records = experiment.run_experiment(config)
    _print_run_lines(records)
    print(f"reports and aggregate.csv written to {config.output_dir}")
    return 0


def _cmd_theory(args) -> int:
    config = _build_config(args)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = experiment.run_theory_battery(seed=config.seeds[0])
    atomic_write_text(
        out_dir / "theory_report.json", json.dumps(result, sort_keys=True, indent=1) + "\n"
    )
    print(
        f"auc bound: {result['auc_bound_violations']} violations in "
        f"{result['auc_bound_pairs']} pairs (worst margin "
        f"{result['auc_bound_worst_margin']:.3e}); tv metric: "
        f"{result['tv_metric_failures']} failures in {result['tv_metric_triples']} triples"
    )
    return 0 if result["auc_bound_violations"] == 0 and result["tv_metric_failures"] == 0 else 2


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    records = experiment.run_sweep(config)
    _print_run_lines(records)
    print(f"sweep reports written under {config.output_dir}")
    return 0


def _cmd_plot(args) -> int:
    config = _build_config(args)
    written = plots.emit_plots(config.output_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_report(args) -> int:
    config = _build_config(args)
    records = experiment.collect_reports(config.output_dir)
    if not records:
        raise ConfigError(f"no reports found under {config.output_dir}")
    rows = experiment.write_aggregate(config.output_dir, records)
    print(",".join(experiment.AGGREGATE_COLUMNS))
    for row in rows:
        print(
            f"{row['dataset']},{row['surrogate']},{row['method']},"
            f"{row['asr']:.6f},{row['cad']:.6f},{row['auc']:.6f}"
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "dataset":
            return _cmd_dataset(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "attack":
            return _cmd_pipeline(args, defense="off", theory_flag=False)
        if args.command == "evaluate":
            return _cmd_pipeline(args, defense="as-configured", theory_flag=True)
        if args.command == "defend":
            return _cmd_pipeline(args, defense="force", theory_flag=False)
        if args.command == "theory":
            return _cmd_theory(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "report":
            return _cmd_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
