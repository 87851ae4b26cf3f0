"""Experiment orchestration: config documents, run pipelines, persistence.

A run is one (config, seed) execution: build the dataset, train the clean
reference model, run the chosen attack, measure it, optionally re-run the
victim under a defense, verify the detectability bounds on the poisoned
graphs, and persist one report file. Aggregates are derived afterwards
from the per-seed files so partial experiments stay usable.
"""

from __future__ import annotations

import dataclasses
import json
import time
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import adversarial, baselines, evaluation, neuralnet, theory, trigger
from .graphcore import (
    GraphDataset,
    atomic_write_text,
    generate_synthetic,
    load_dataset,
    parse_tudataset,
    split_dataset,
)


class ConfigError(Exception):
    """Invalid configuration document or override; names the offending key."""


class ExperimentError(RuntimeError):
    """A pipeline stage failed; the failure record is already persisted."""


METHODS = (
    "dpsba",
    "erb",
    "erb-clean",
    "motif",
    "motif-s",
    "dpsba-no-hard-samples",
    "dpsba-no-location",
    "dpsba-no-feature-gen",
    "dpsba-no-topology-gen",
    "dpsba-no-adversarial",
)

_VARIANT_BY_METHOD = {
    "dpsba": "full",
    "dpsba-no-hard-samples": "no_hard_samples",
    "dpsba-no-location": "no_location",
    "dpsba-no-feature-gen": "no_feature_gen",
    "dpsba-no-topology-gen": "no_topology_gen",
    "dpsba-no-adversarial": "no_adversarial",
}

DEFENSES = ("subsample", "filter")

SWEEPABLE = ("alpha", "beta", "poison_fraction", "trigger_size")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; defaults follow the study protocol."""

    # Dataset: either a TUDataset directory or synthetic generation params.
    dataset_path: str | None = None
    dataset_name: str | None = None
    dataset_file: str | None = None  # previously saved canonical dataset
    synthetic_per_class: int = 200
    synthetic_seed: int = 1
    standardize_features: bool = False
    train_fraction: float = 0.5
    split_seed: int = 1

    # Attack method and model architectures.
    method: str = "dpsba"
    surrogate_arch: str = "gcn-mean"
    target_arch: str | None = None
    detector: str = "stats-mahalanobis"
    detector_per_label: bool = True

    # Defense pass, applied when `defense` is set.
    defense: str | None = None
    defense_rate: float = 0.1
    defense_quantile: float = 0.05

    # Attack knobs, forwarded into AttackConfig.
    target_label: int | None = None
    poison_fraction: float = 0.05
    trigger_size: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    epochs_per_stage: int = 20
    outer_iterations: int = 3
    learning_rate: float = 1e-3
    generator_learning_rate: float = 8e-3
    generator_weight_decay: float = 0.5
    discriminator_weight_decay: float = 0.35
    surrogate_epochs: int = 100
    surrogate_weight_decay: float = 3e-3
    victim_epochs: int = 100
    finetune_epochs: int = 10
    batch_size: int | None = 32
    hidden_dim: int = 32
    num_layers: int = 2
    discriminator_hidden: int = 16
    candidate_multiplier: int = 2
    importance_mode: str = "logit-l1"
    early_stop_topology: bool = False
    early_stop_feature: bool = False
    early_stop_min_gain: float = 0.005
    sever_external_edges: bool = False
    er_edge_prob: float = 0.8
    stealth_budget: float | None = None

    # Execution.
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    theory_bins: int = 20
    run_theory: bool = True

    # Parameter sweeps (the sweep subcommand).
    sweep_param: str | None = None
    sweep_values: list[float] | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.surrogate_arch not in neuralnet.ARCHITECTURES:
            raise ConfigError(f"unknown surrogate_arch {self.surrogate_arch!r}")
        if self.target_arch is not None and self.target_arch not in neuralnet.ARCHITECTURES:
            raise ConfigError(f"unknown target_arch {self.target_arch!r}")
        if self.detector not in evaluation.DETECTOR_KINDS:
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.defense is not None and self.defense not in DEFENSES:
            raise ConfigError(f"unknown defense {self.defense!r}; expected one of {DEFENSES}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.sweep_param is not None and self.sweep_param not in SWEEPABLE:
            raise ConfigError(
                f"sweep_param {self.sweep_param!r} not sweepable; expected one of {SWEEPABLE}"
            )
        srcs = [self.dataset_path is not None, self.dataset_file is not None]
        if sum(srcs) > 1:
            raise ConfigError("set at most one of dataset_path and dataset_file")
        try:
            self.attack_config(target_label=0, seed=0).validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def attack_config(self, target_label: int, seed: int) -> adversarial.AttackConfig:
        return adversarial.AttackConfig(
            target_label=target_label,
            poison_fraction=self.poison_fraction,
            trigger_size=self.trigger_size,
            alpha=self.alpha,
            beta=self.beta,
            epochs_per_stage=self.epochs_per_stage,
            outer_iterations=self.outer_iterations,
            learning_rate=self.learning_rate,
            generator_learning_rate=self.generator_learning_rate,
            generator_weight_decay=self.generator_weight_decay,
            discriminator_weight_decay=self.discriminator_weight_decay,
            seed=seed,
            stealth_budget=self.stealth_budget,
            early_stop_topology=self.early_stop_topology,
            early_stop_feature=self.early_stop_feature,
            early_stop_min_gain=self.early_stop_min_gain,
            candidate_multiplier=self.candidate_multiplier,
            importance_mode=self.importance_mode,
            surrogate_epochs=self.surrogate_epochs,
            surrogate_weight_decay=self.surrogate_weight_decay,
            victim_epochs=self.victim_epochs,
            finetune_epochs=self.finetune_epochs,
            batch_size=self.batch_size,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            discriminator_hidden=self.discriminator_hidden,
            sever_external_edges=self.sever_external_edges,
            er_edge_prob=self.er_edge_prob,
        )

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        return _plain(out)


# ---------------------------------------------------------------------------
# Config document parsing
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}

# Organizational section names a nested document may group fields under.
SECTIONS = ("dataset", "model", "attack", "defense", "run", "sweep", "evaluation")


def _coerce(key: str, value, annotation) -> object:
    """Coerce one document value to its annotated field type, or fail loudly."""
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
            return None
        return _coerce(key, value, args[0])
    if origin is list:
        (inner,) = typing.get_args(annotation)
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip() != ""]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"key {key!r}: expected a list, got {type(value).__name__}")
        return [_coerce(key, v, inner) for v in value]
    if annotation is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")
    if annotation is int:
        if isinstance(value, bool):
            raise ConfigError(f"key {key!r}: expected an integer, got a boolean")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"key {key!r}: expected an integer, got {value!r}") from None
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"key {key!r}: expected an integer, got {value!r}")
    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(f"key {key!r}: expected a number, got a boolean")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"key {key!r}: expected a number, got {value!r}") from None
        raise ConfigError(f"key {key!r}: expected a number, got {value!r}")
    if annotation is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"key {key!r}: expected a string, got {value!r}")
    raise ConfigError(f"key {key!r}: unsupported field type {annotation!r}")


def _resolve_annotation(name: str):
    ann = _FIELD_TYPES[name]
    if isinstance(ann, str):
        ann = eval(ann, globals(), vars(typing))  # annotations stored as strings
    return ann


def _flatten_document(doc: dict) -> dict:
    """Flatten one optional level of organizational nesting."""
    flat: dict = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                raise ConfigError(f"unknown config section {key!r}")
            for sub, sval in value.items():
                if isinstance(sval, dict):
                    raise ConfigError(f"key {key}.{sub!r}: nesting deeper than one section")
                if sub in flat:
                    raise ConfigError(f"duplicate config key {sub!r}")
                flat[sub] = sval
        else:
            if key in flat:
                raise ConfigError(f"duplicate config key {key!r}")
            flat[key] = value
    return flat


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a key-value mapping")
    flat = _flatten_document(doc)
    kwargs = {}
    for key, value in flat.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, value, _resolve_annotation(key))
    config = ExperimentConfig(**kwargs)
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML/JSON config document; unknown keys are hard errors."""
    import yaml

    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"unparseable config document: {e}") from e
    if doc is None:
        doc = {}
    return config_from_dict(doc)


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `key=value` override strings; dotted keys use the last segment."""
    out = dataclasses.replace(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if "." in key:
            section, _, leaf = key.partition(".")
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            key = leaf
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(out, key, _coerce(key, raw.strip(), _resolve_annotation(key)))
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def build_dataset(config: ExperimentConfig) -> GraphDataset:
    """Materialize the configured dataset and attach the train/test split."""
    if config.dataset_file is not None:
        dataset = load_dataset(config.dataset_file)
        if not dataset.split:
            dataset = split_dataset(dataset, config.train_fraction, config.split_seed)
        return dataset
    if config.dataset_path is not None:
        if config.dataset_name is None:
            raise ConfigError("dataset_name is required with dataset_path")
        dataset = parse_tudataset(
            config.dataset_path, config.dataset_name, standardize=config.standardize_features
        )
    else:
        dataset = generate_synthetic(config.synthetic_per_class, config.synthetic_seed)
    return split_dataset(dataset, config.train_fraction, config.split_seed)


def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(path: str | Path, record: dict) -> None:
    atomic_write_text(Path(path), json.dumps(_plain(record), sort_keys=True, indent=1) + "\n")


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def _defended_dataset_subsample(
    poisoned: GraphDataset, rate: float, seed: int
) -> GraphDataset:
    reduced = evaluation.defend_subsample(poisoned.train_graphs(), rate, seed)
    return poisoned.replace_graphs({g.id: g for g in reduced})


def _defended_dataset_filter(
    poisoned: GraphDataset, detector: evaluation.Detector, quantile: float
) -> tuple[GraphDataset, list[int]]:
    kept, dropped = evaluation.defend_filter(poisoned.train_graphs(), detector, quantile)
    kept_ids = {g.id for g in kept}
    graphs = [g for g in poisoned.graphs if g.id in kept_ids or g.id in set(poisoned.test_ids())]
    split = {"train": sorted(kept_ids), "test": list(poisoned.test_ids())}
    defended = GraphDataset(
        graphs=graphs,
        num_classes=poisoned.num_classes,
        feature_dim=poisoned.feature_dim,
        split=split,
        target_label=poisoned.target_label,
        name=poisoned.name,
    )
    return defended, dropped


def run_defense(
    config: ExperimentConfig,
    clean_dataset: GraphDataset,
    poisoned_dataset: GraphDataset,
    pipeline,
    ledger: trigger.PoisonLedger,
    arch: str,
    attack_cfg: adversarial.AttackConfig,
    detector: evaluation.Detector,
    asr_before: float,
) -> dict:
    """Re-train the victim on defended data and re-measure the attack."""
    record: dict = {"kind": config.defense}
    if config.defense == "subsample":
        record["rate"] = config.defense_rate
        defended = _defended_dataset_subsample(
            poisoned_dataset, config.defense_rate, attack_cfg.seed + 20
        )
    elif config.defense == "filter":
        record["quantile"] = config.defense_quantile
        defended, dropped = _defended_dataset_filter(
            poisoned_dataset, detector, config.defense_quantile
        )
        poisoned_ids = set(ledger.poisoned_ids())
        record["dropped_ids"] = dropped
        record["dropped_total"] = len(dropped)
        record["dropped_poisoned"] = sum(1 for gid in dropped if gid in poisoned_ids)
    else:
        raise ConfigError(f"unknown defense {config.defense!r}")
    victim = neuralnet.train_classifier(
        defended,
        arch,
        attack_cfg.train_config(attack_cfg.victim_epochs, attack_cfg.seed + 1),
        hidden_dim=attack_cfg.hidden_dim,
        num_layers=attack_cfg.num_layers,
    )
    asr_after = evaluation.asr(
        victim, clean_dataset.test_graphs(), pipeline, attack_cfg.target_label
    )
    record["asr_before"] = asr_before
    record["asr_after"] = asr_after
    record["asr_drop"] = asr_before - asr_after
    record["defended_clean_accuracy"] = neuralnet.accuracy(victim, clean_dataset.test_graphs())
    return record


def theory_block(
    clean_dataset: GraphDataset,
    poisoned_dataset: GraphDataset,
    ledger: trigger.PoisonLedger,
    detector_auc: float,
    bins: int,
) -> dict:
    ids = set(ledger.poisoned_ids())
    # Population view: the untouched train graphs stand in for the clean
    # distribution an auditor of the released split would compare against.
    # A paired clean-vs-poisoned histogram over only |ids| graphs saturates.
    clean = [g for g in clean_dataset.train_graphs() if g.id not in ids]
    poisoned = [poisoned_dataset.graph(gid) for gid in sorted(ids)]
    shift = theory.verify_graph_shift(clean, poisoned, ledger, bins=bins)
    block = shift.to_dict()
    block["detector_auc"] = detector_auc
    return block


def _run_attack_stage(
    config: ExperimentConfig,
    dataset: GraphDataset,
    attack_cfg: adversarial.AttackConfig,
    clean_model,
    target_arch: str,
):
    """Dispatch on method; returns (report, poisoned_dataset, pipeline, ledger, trace)."""
    method = config.method
    if method in _VARIANT_BY_METHOD:
        variant = _VARIANT_BY_METHOD[method]
        run = adversarial.run_dpsba(dataset, config.surrogate_arch, attack_cfg, variant=variant)
        if target_arch == config.surrogate_arch:
            victim = run.model
        else:
            victim = neuralnet.train_classifier(
                run.poisoned_dataset,
                target_arch,
                attack_cfg.train_config(attack_cfg.victim_epochs, attack_cfg.seed + 1),
                hidden_dim=attack_cfg.hidden_dim,
                num_layers=attack_cfg.num_layers,
            )
        report = adversarial.evaluate_run(
            run,
            dataset,
            attack_cfg,
            method=method,
            victim=victim,
            target_arch=target_arch,
            clean_model=clean_model,
            detector_kind=config.detector,
            detector_per_label=config.detector_per_label,
        )
        return report, run.poisoned_dataset, run.pipeline(), run.ledger, run.trace, victim
    if method in ("erb", "erb-clean"):
        run, report = baselines.run_erb(
            dataset,
            attack_cfg,
            clean_label=method == "erb-clean",
            surrogate_arch=target_arch,
            clean_model=clean_model,
            detector_kind=config.detector,
            detector_per_label=config.detector_per_label,
        )
    elif method in ("motif", "motif-s"):
        run, report = baselines.run_motif(
            dataset,
            attack_cfg,
            mode="rare" if method == "motif" else "frequent",
            surrogate_arch=target_arch,
            clean_model=clean_model,
            detector_kind=config.detector,
            detector_per_label=config.detector_per_label,
        )
    else:
        raise ConfigError(f"unknown method {method!r}")
    return report, run.poisoned_dataset, run.pipeline(), run.ledger, [], run.model


def run_single(config: ExperimentConfig, seed: int, out_dir: str | Path) -> dict:
    """One (config, seed) pipeline; persists and returns the report record."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"report_{config.method}_{seed}.json"
    record: dict = {
        "method": config.method,
        "seed": seed,
        "config_echo": config.echo(),
    }
    stage = "dataset"
    started = time.monotonic()
    try:
        dataset = build_dataset(config)
        record["dataset"] = {
            "name": dataset.name,
            "num_graphs": len(dataset.graphs),
            "num_classes": dataset.num_classes,
            "feature_dim": dataset.feature_dim,
            "train_size": len(dataset.train_ids()),
            "test_size": len(dataset.test_ids()),
            "label_histogram": dataset.label_histogram(),
        }
        target_label = (
            config.target_label if config.target_label is not None else dataset.target_label
        )
        attack_cfg = config.attack_config(target_label=target_label, seed=seed)
        target_arch = config.target_arch or config.surrogate_arch

        stage = "clean-training"
        clean_model = neuralnet.train_classifier(
            dataset,
            target_arch,
            attack_cfg.train_config(attack_cfg.victim_epochs, seed + 1),
            hidden_dim=attack_cfg.hidden_dim,
            num_layers=attack_cfg.num_layers,
        )
        stage = "attack"
        metrics, poisoned, pipeline, ledger, trace, victim = _run_attack_stage(
            config, dataset, attack_cfg, clean_model, target_arch
        )
        record["metrics"] = metrics.to_dict()
        record["trace"] = trace
        record["poison_audit"] = {
            "poisoned_count": len(ledger),
            "label_diffs": ledger.label_diff_count(poisoned),
            "dataset_size_clean": len(dataset.graphs),
            "dataset_size_poisoned": len(poisoned.graphs),
        }

        if config.defense is not None:
            stage = "defense"
            defense_detector = evaluation.audit_detector(
                poisoned, seed, config.detector, config.detector_per_label
            )
            record["defense"] = run_defense(
                config,
                dataset,
                poisoned,
                pipeline,
                ledger,
                target_arch,
                attack_cfg,
                defense_detector,
                asr_before=metrics.asr,
            )

        if config.run_theory:
            stage = "theory"
            record["theory"] = theory_block(
                dataset, poisoned, ledger, metrics.auc, config.theory_bins
            )

    except Exception as e:  # persist the failure before surfacing it
        failure = {
            "method": config.method,
            "seed": seed,
            "config_echo": config.echo(),
            "failed_stage": stage,
            "error": f"{type(e).__name__}: {e}",
        }
        write_report(report_path, failure)
        raise ExperimentError(f"stage {stage!r} failed for seed {seed}: {e}") from e
    # Wall-clock time stays out of the persisted file: reruns of one
    # config+seed must produce byte-identical reports.
    write_report(report_path, record)
    record["runtime_seconds"] = round(time.monotonic() - started, 3)
    return record


AGGREGATE_COLUMNS = ("dataset", "surrogate", "method", "asr", "cad", "auc")


def compute_aggregate(records: list[dict]) -> list[dict]:
    """Mean ASR/CAD/AUC per (dataset, surrogate, method) over seeds."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        if "metrics" not in rec:
            continue  # failure records carry no metrics
        m = rec["metrics"]
        key = (m["dataset_name"], m["surrogate_arch"], m["method"])
        groups.setdefault(key, []).append(m)
    rows = []
    for key in sorted(groups):
        ms = groups[key]
        rows.append(
            {
                "dataset": key[0],
                "surrogate": key[1],
                "method": key[2],
                "asr": float(np.mean([m["asr"] for m in ms])),
                "cad": float(np.mean([m["cad"] for m in ms])),
                "auc": float(np.mean([m["auc"] for m in ms])),
            }
        )
    return rows


def aggregate_csv_text(rows: list[dict]) -> str:
    lines = [",".join(AGGREGATE_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                str(row[c]) if c in ("dataset", "surrogate", "method") else format(row[c], ".6f")
                for c in AGGREGATE_COLUMNS
            )
        )
    return "\n".join(lines) + "\n"


def write_aggregate(out_dir: str | Path, records: list[dict]) -> list[dict]:
    rows = compute_aggregate(records)
    atomic_write_text(Path(out_dir) / "aggregate.csv", aggregate_csv_text(rows))
    return rows


def collect_reports(out_dir: str | Path) -> list[dict]:
    paths = sorted(Path(out_dir).glob("report_*.json"))
    return [load_report(p) for p in paths]


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> list[dict]:
    """All seeds of one config, plus the aggregate table."""
    config.validate()
    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    records = [run_single(config, seed, out_dir) for seed in config.seeds]
    write_aggregate(out_dir, collect_reports(out_dir))
    return records


def run_sweep(config: ExperimentConfig, out_dir: str | Path | None = None) -> list[dict]:
    """Run the experiment once per swept value of one attack parameter."""
    config.validate()
    if config.sweep_param is None or not config.sweep_values:
        raise ConfigError("sweep requires sweep_param and non-empty sweep_values")
    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    all_records = []
    for value in config.sweep_values:
        sub = dataclasses.replace(config)
        ann = _resolve_annotation(config.sweep_param)
        setattr(sub, config.sweep_param, _coerce(config.sweep_param, value, ann))
        sub.validate()
        sub_dir = out_dir / f"{config.sweep_param}={value:g}"
        for seed in sub.seeds:
            all_records.append(run_single(sub, seed, sub_dir))
        write_aggregate(sub_dir, collect_reports(sub_dir))
    return all_records


def run_theory_battery(pairs: int = 200, triples: int = 1000, seed: int = 0) -> dict:
    """Standalone numeric verification: bound checks on random distributions."""
    rng = np.random.default_rng(seed)
    violations = 0
    worst_margin = float("inf")
    for _ in range(pairs):
        p, q = theory.random_distribution_pair(rng)
        check = theory.verify_auc_bound(p, q)
        worst_margin = min(worst_margin, check.empirical_best_auc - check.bound)
        if not check.holds:
            violations += 1
    metric_failures = 0
    for _ in range(triples):
        p, q = theory.random_distribution_pair(rng)
        r, _ = theory.random_distribution_pair(rng)
        d_pq = theory.tv_distance(p, q)
        d_qp = theory.tv_distance(q, p)
        d_pr = theory.tv_distance(p, r)
        d_rq = theory.tv_distance(r, q)
        ok = (
            abs(d_pq - d_qp) < 1e-12
            and -1e-12 <= d_pq <= 1.0 + 1e-12
            and d_pq <= d_pr + d_rq + 1e-9
            and theory.tv_distance(p, p) < 1e-12
        )
        if not ok:
            metric_failures += 1
    return {
        "auc_bound_pairs": pairs,
        "auc_bound_violations": violations,
        "auc_bound_worst_margin": worst_margin,
        "tv_metric_triples": triples,
        "tv_metric_failures": metric_failures,
    }
