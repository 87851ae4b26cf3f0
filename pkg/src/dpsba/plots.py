"""Static figure emission from persisted experiment reports.

Reads report files from a directory and writes PNG figures next to them:
per-run overlaid anomaly-score histograms, and metric-versus-parameter
curves whenever the directory holds runs that differ in a swept knob.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

HIST_BINS = 20

SWEEP_PARAMS = ("alpha", "beta", "poison_fraction", "trigger_size")


class PlotError(RuntimeError):
    pass


def histogram_counts(
    clean_scores: list[float], poisoned_scores: list[float], bins: int = HIST_BINS
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared-bin counts for the two score populations."""
    combined = np.asarray(list(clean_scores) + list(poisoned_scores), dtype=np.float64)
    lo, hi = float(combined.min()), float(combined.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)
    clean_counts, _ = np.histogram(clean_scores, bins=edges)
    poisoned_counts, _ = np.histogram(poisoned_scores, bins=edges)
    return clean_counts, poisoned_counts, edges


def emit_histogram(report: dict, out_path: Path) -> Path:
    """Overlaid clean/poisoned anomaly-score histogram for one run."""
    metrics = report["metrics"]
    clean = metrics["clean_scores"]
    poisoned = metrics["poisoned_scores"]
    if not clean or not poisoned:
        raise PlotError("report has empty score lists")
    clean_counts, poisoned_counts, edges = histogram_counts(clean, poisoned)
    centers = (edges[:-1] + edges[1:]) / 2
    width = (edges[1] - edges[0]) * 0.9
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, clean_counts, width=width, alpha=0.6, label="clean")
    ax.bar(centers, poisoned_counts, width=width, alpha=0.6, label="poisoned")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("graph count")
    ax.set_title(
        f"{metrics['method']} on {metrics['dataset_name']} "
        f"(seed {metrics['seed']}, detector AUC {metrics['auc']:.3f})"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _sweep_groups(reports: list[dict], param: str) -> dict[float, list[dict]]:
    groups: dict[float, list[dict]] = {}
    for rep in reports:
        echo = rep.get("config_echo", {})
        if param not in echo or "metrics" not in rep:
            continue
        groups.setdefault(float(echo[param]), []).append(rep["metrics"])
    return groups


def emit_sweep_curve(reports: list[dict], param: str, out_path: Path) -> Path | None:
    """ASR and AUC versus one swept parameter; needs >= 2 distinct values."""
    groups = _sweep_groups(reports, param)
    if len(groups) < 2:
        return None
    values = sorted(groups)
    asrs = [float(np.mean([m["asr"] for m in groups[v]])) for v in values]
    aucs = [float(np.mean([m["auc"] for m in groups[v]])) for v in values]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, asrs, marker="o", label="attack success rate")
    ax.plot(values, aucs, marker="s", label="detector AUC")
    if max(values) / max(min(values), 1e-12) > 50:
        ax.set_xscale("log")
    ax.set_xlabel(param)
    ax.set_ylabel("metric value")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"effect of {param}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def emit_plots(report_dir: str | Path) -> list[Path]:
    """All figures derivable from the reports in one directory tree."""
    report_dir = Path(report_dir)
    paths = sorted(report_dir.rglob("report_*.json"))
    if not paths:
        raise PlotError(f"no reports found under {report_dir}")
    reports = [json.loads(p.read_text()) for p in paths]
    written: list[Path] = []
    for path, rep in zip(paths, reports):
        if "metrics" not in rep:
            continue  # failure records have nothing to draw
        out = path.parent / (path.stem.replace("report_", "hist_") + ".png")
        written.append(emit_histogram(rep, out))
    for param in SWEEP_PARAMS:
        out = report_dir / f"sweep_{param}.png"
        result = emit_sweep_curve(reports, param, out)
        if result is not None:
            written.append(result)
    if not written:
        raise PlotError("reports contained no drawable metrics")
    return written
