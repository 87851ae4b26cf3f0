"""Shared fixtures: one reference run per session, reused across files.

The reference scale (200 graphs/class, default attack settings) is what the
acceptance checks are stated against; everything expensive is computed once
here and handed out read-only. Unit tests use the small fixtures instead.
"""

from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import settings

from dpsba import adversarial, baselines, evaluation, neuralnet
from dpsba.graphcore import generate_synthetic, split_dataset

settings.register_profile("suite", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("suite")

# Acceptance tests append one line each; the terminal-summary hook prints
# them after the run so they survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checks")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_config() -> adversarial.AttackConfig:
    return adversarial.AttackConfig(target_label=1, seed=0)


@pytest.fixture(scope="session")
def timed_reference(reference_config):
    """End-to-end reference pipeline with its wall-clock cost."""
    started = time.monotonic()
    dataset = split_dataset(generate_synthetic(200, seed=1), 0.5, seed=1)
    clean_model = neuralnet.train_classifier(
        dataset,
        "gcn-mean",
        reference_config.train_config(reference_config.victim_epochs, reference_config.seed + 1),
        hidden_dim=reference_config.hidden_dim,
        num_layers=reference_config.num_layers,
    )
    run = adversarial.run_dpsba(dataset, "gcn-mean", reference_config)
    report = adversarial.evaluate_run(
        run, dataset, reference_config, method="dpsba", clean_model=clean_model
    )
    elapsed = time.monotonic() - started
    return {
        "dataset": dataset,
        "clean_model": clean_model,
        "run": run,
        "report": report,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def reference_dataset(timed_reference):
    return timed_reference["dataset"]


@pytest.fixture(scope="session")
def clean_model(timed_reference):
    return timed_reference["clean_model"]


@pytest.fixture(scope="session")
def full_run(timed_reference):
    return timed_reference["run"]


@pytest.fixture(scope="session")
def full_report(timed_reference):
    return timed_reference["report"]


@pytest.fixture(scope="session")
def noadv_result(reference_dataset, reference_config, clean_model):
    return adversarial.run_ablation(
        reference_dataset, reference_config, "no_adversarial", clean_model=clean_model
    )


@pytest.fixture(scope="session")
def erb_result(reference_dataset, reference_config, clean_model):
    return baselines.run_erb(reference_dataset, reference_config, clean_model=clean_model)


@pytest.fixture(scope="session")
def erb_clean_result(reference_dataset, reference_config, clean_model):
    return baselines.run_erb(
        reference_dataset, reference_config, clean_label=True, clean_model=clean_model
    )


@pytest.fixture(scope="session")
def motif_rare_result(reference_dataset, reference_config, clean_model):
    return baselines.run_motif(
        reference_dataset, reference_config, mode="rare", clean_model=clean_model
    )


@pytest.fixture(scope="session")
def motif_frequent_result(reference_dataset, reference_config, clean_model):
    return baselines.run_motif(
        reference_dataset, reference_config, mode="frequent", clean_model=clean_model
    )


@pytest.fixture(scope="session")
def attack_state(reference_dataset, reference_config):
    """Freshly initialized attack state (surrogate + first injection)."""
    return adversarial.initialize_attack(reference_dataset, "gcn-mean", reference_config)


@pytest.fixture(scope="session")
def audit_detector_full(full_run, reference_config):
    return evaluation.audit_detector(
        full_run.poisoned_dataset, reference_config.seed, "stats-mahalanobis", True
    )


# ---- small-scale fixtures for unit tests ----


@pytest.fixture(scope="session")
def small_dataset():
    return split_dataset(generate_synthetic(12, seed=3), 0.5, seed=3)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    cfg = neuralnet.TrainConfig(epochs=40, seed=0)
    return neuralnet.train_classifier(small_dataset, "gcn-mean", cfg, hidden_dim=16)


@pytest.fixture(scope="session")
def small_attack_config():
    return adversarial.AttackConfig(
        target_label=1,
        seed=0,
        poison_fraction=0.4,
        trigger_size=3,
        surrogate_epochs=8,
        epochs_per_stage=2,
        outer_iterations=1,
        victim_epochs=8,
        finetune_epochs=2,
    )


@pytest.fixture()
def small_state(small_dataset, small_attack_config):
    return adversarial.initialize_attack(small_dataset, "gcn-mean", small_attack_config)


@pytest.fixture()
def rng():
    # Function-scoped: a shared generator would couple tests through its state.
    return np.random.default_rng(2024)
