"""Distribution-preserving clean-label backdoor attacks on graph classifiers.

A research laboratory covering the full loop: dataset handling, surrogate
training, staged adversarial trigger generation, baseline attacks, anomaly
detection and defenses, detectability-bound verification, and a
reproducible experiment CLI.
"""

from .adversarial import (
    ABLATION_VARIANTS,
    AttackConfig,
    DpsbaRun,
    run_ablation,
    run_dpsba,
    run_transfer,
)
from .baselines import MotifTable, count_motifs, er_trigger, run_erb, run_motif
from .evaluation import (
    Detector,
    MetricsReport,
    asr,
    auc,
    cad,
    defend_filter,
    defend_subsample,
    fit_detector,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
    run_sweep,
)
from .graphcore import (
    Graph,
    GraphDataset,
    generate_synthetic,
    load_dataset,
    parse_tudataset,
    save_dataset,
    split_dataset,
)
from .neuralnet import TrainConfig, build_model, train_classifier
from .selection import select_hard_samples, select_trigger_nodes
from .theory import (
    auc_lower_bound,
    tv_distance,
    tv_graph_lower_bound,
    verify_auc_bound,
    verify_graph_shift,
)
from .trigger import PoisonLedger, TriggerGenerators, TriggerInstance, init_generators, inject

__version__ = "0.1.0"

__all__ = [
    "ABLATION_VARIANTS",
    "AttackConfig",
    "ConfigError",
    "Detector",
    "DpsbaRun",
    "ExperimentConfig",
    "Graph",
    "GraphDataset",
    "MetricsReport",
    "MotifTable",
    "PoisonLedger",
    "TrainConfig",
    "TriggerGenerators",
    "TriggerInstance",
    "asr",
    "auc",
    "auc_lower_bound",
    "build_model",
    "cad",
    "count_motifs",
    "defend_filter",
    "defend_subsample",
    "er_trigger",
    "fit_detector",
    "generate_synthetic",
    "init_generators",
    "inject",
    "load_config",
    "load_dataset",
    "parse_tudataset",
    "run_ablation",
    "run_dpsba",
    "run_erb",
    "run_experiment",
    "run_motif",
    "run_sweep",
    "run_transfer",
    "save_dataset",
    "select_hard_samples",
    "select_trigger_nodes",
    "split_dataset",
    "train_classifier",
    "tv_distance",
    "tv_graph_lower_bound",
    "verify_auc_bound",
    "verify_graph_shift",
]
