"""Attack metrics, anomaly detectors and training-time defenses.

Attack success rate (ASR) is measured by crafting a trigger for every test
graph whose label differs from the target class and checking whether the
victim now predicts the target class. Clean accuracy drop (CAD) compares a
clean-trained baseline and the backdoored model on untouched test graphs.
Stealth is quantified by one-class anomaly detectors fitted on clean graphs
only, summarized as the clean-versus-poisoned ranking AUC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.stats import rankdata

from . import neuralnet
from .graphcore import Graph, GraphDataset, graph_stats, keep_nodes

DETECTOR_KINDS = ("stats-mahalanobis", "one-class-embedding")

COV_RIDGE = 1e-6


@dataclass
class Detector:
    """A fitted one-class scorer; construct via ``fit_detector``.

    When ``components`` is set the detector is label-conditional: a graph
    is scored against the reference model fitted on clean graphs of its own
    label, falling back to the pooled fit for labels never seen clean. The
    pooled fields are always populated.
    """

    kind: str
    mean: np.ndarray | None = None
    cov_inv: np.ndarray | None = None
    embedder: object | None = None
    centroid: np.ndarray | None = None
    components: dict[int, "Detector"] | None = None

    def _check_fitted(self) -> None:
        if self.kind == "stats-mahalanobis":
            if self.mean is None or self.cov_inv is None:
                raise RuntimeError("detector is not fitted")
        elif self.kind == "one-class-embedding":
            if self.embedder is None or self.centroid is None:
                raise RuntimeError("detector is not fitted")
        else:
            raise ValueError(f"unknown detector kind {self.kind!r}")


def mahalanobis_score(vector: np.ndarray, mean: np.ndarray, cov_inv: np.ndarray) -> float:
    """sqrt((v - m)^T C^-1 (v - m)); the |z| distance in one dimension."""
    d = np.asarray(vector, dtype=np.float64) - mean
    q = float(d @ cov_inv @ d)
    return math.sqrt(max(q, 0.0))


EMBED_DIM = 8
EMBED_EPOCHS = 20
EMBED_LR = 1e-3


def _embed(embedder, graph: Graph) -> np.ndarray:
    adj, x = neuralnet.graph_tensors(graph)
    with torch.no_grad():
        return embedder(adj, x).numpy().copy()


def fit_detector(
    clean_graphs: list[Graph], kind: str, seed: int = 0, per_label: bool = False
) -> Detector:
    """Fit a one-class anomaly scorer on clean graphs only.

    ``stats-mahalanobis`` fits mean and ridge-regularized covariance of the
    graph summary vectors. ``one-class-embedding`` trains a gcn-mean
    embedder to pull clean embeddings toward their initial centroid; the
    score is the distance to that centroid.

    ``per_label=True`` additionally fits one reference per class and scores
    each graph against its own label's reference (the per-class screening a
    poisoning auditor runs); labels with fewer than 10 clean graphs fall
    back to the pooled fit.
    """
    if kind not in DETECTOR_KINDS:
        raise ValueError(f"unknown detector kind {kind!r}; expected {DETECTOR_KINDS}")
    if len(clean_graphs) < 10:
        raise ValueError(f"need at least 10 clean graphs to fit, got {len(clean_graphs)}")
    if per_label:
        pooled = fit_detector(clean_graphs, kind, seed=seed, per_label=False)
        components = {}
        for label in sorted({g.label for g in clean_graphs}):
            subset = [g for g in clean_graphs if g.label == label]
            if len(subset) >= 10:
                components[label] = fit_detector(subset, kind, seed=seed + 1 + label)
        pooled.components = components
        return pooled
    if kind == "stats-mahalanobis":
        vecs = np.stack([graph_stats(g).vector for g in clean_graphs])
        mean = vecs.mean(axis=0)
        centered = vecs - mean
        cov = centered.T @ centered / vecs.shape[0]
        cov += COV_RIDGE * np.eye(cov.shape[0])
        return Detector(kind=kind, mean=mean, cov_inv=np.linalg.inv(cov))

    feature_dim = clean_graphs[0].features.shape[1]
    embedder = neuralnet.build_model(
        "gcn-mean", feature_dim, EMBED_DIM, hidden_dim=16, num_layers=2, seed=seed
    )
    tensors = [neuralnet.graph_tensors(g) for g in clean_graphs]
    with torch.no_grad():
        centroid = torch.stack([embedder(a, x) for a, x in tensors]).mean(dim=0)
    opt = torch.optim.Adam(embedder.parameters(), lr=EMBED_LR, betas=neuralnet.ADAM_BETAS)
    for _ in range(EMBED_EPOCHS):
        opt.zero_grad()
        loss = torch.stack(
            [((embedder(a, x) - centroid) ** 2).sum() for a, x in tensors]
        ).mean()
        loss.backward()
        opt.step()
    return Detector(kind=kind, embedder=embedder, centroid=centroid.numpy().copy())


def audit_detector(
    released_dataset,
    seed: int,
    kind: str = "stats-mahalanobis",
    per_label: bool = True,
) -> Detector:
    """Detector fit the way a training-set auditor would.

    The auditor screens the train split they were handed; they never see the
    pre-poison originals, so reference statistics come from the released
    graphs themselves (poison rows included, which slightly widens them).
    """
    return fit_detector(
        released_dataset.train_graphs(), kind, seed=seed, per_label=per_label
    )


def anomaly_score(detector: Detector, graph: Graph) -> float:
    """Non-negative score; larger means more anomalous."""
    detector._check_fitted()
    if detector.components is not None and graph.label in detector.components:
        detector = detector.components[graph.label]
    if detector.kind == "stats-mahalanobis":
        return mahalanobis_score(graph_stats(graph).vector, detector.mean, detector.cov_inv)
    emb = _embed(detector.embedder, graph)
    return float(np.sqrt(((emb - detector.centroid) ** 2).sum()))


def score_graphs(detector: Detector, graphs: list[Graph]) -> list[float]:
    return [anomaly_score(detector, g) for g in graphs]


# ---------------------------------------------------------------------------
# Core metrics
# ---------------------------------------------------------------------------


def asr(model, test_graphs: list[Graph], trigger_pipeline, target_label: int) -> float:
    """Fraction of triggered non-target test graphs predicted as the target.

    Only graphs with a different label and enough nodes to host the trigger
    participate; each gets its own crafted trigger before prediction.
    """
    m = trigger_pipeline.trigger_size
    eligible = [
        g for g in test_graphs if g.label != target_label and g.num_nodes >= m
    ]
    if not eligible:
        raise ValueError("no test graphs are eligible for ASR measurement")
    hits = 0
    for g in eligible:
        poisoned = trigger_pipeline.poison(g)
        if neuralnet.predict(model, poisoned) == target_label:
            hits += 1
    return hits / len(eligible)


def cad(clean_accuracy: float, backdoor_accuracy: float) -> float:
    """Clean accuracy drop; negative when the backdoored model is better."""
    for name, v in (("clean_accuracy", clean_accuracy), ("backdoor_accuracy", backdoor_accuracy)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return clean_accuracy - backdoor_accuracy


def auc(clean_scores: list[float], anomalous_scores: list[float]) -> float:
    """Probability a random anomalous score ranks above a random clean one.

    Computed from midranks, which equals the pairwise count with ties worth
    one half each, scaled by the number of pairs.
    """
    if not clean_scores or not anomalous_scores:
        raise ValueError("auc needs non-empty score lists")
    pos = np.asarray(anomalous_scores, dtype=np.float64)
    neg = np.asarray(clean_scores, dtype=np.float64)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("auc scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: len(pos)].sum()
    na, nc = len(pos), len(neg)
    return float((r_pos - na * (na + 1) / 2.0) / (na * nc))


# ---------------------------------------------------------------------------
# Defenses
# ---------------------------------------------------------------------------


def defend_subsample(train_graphs: list[Graph], removal_rate: float, seed: int) -> list[Graph]:
    """Randomly drop floor(rate * N) nodes per graph, never below 2 left."""
    if not (0.0 <= removal_rate < 1.0):
        raise ValueError(f"removal_rate must be in [0, 1), got {removal_rate}")
    rng = np.random.default_rng(seed)
    out = []
    for g in train_graphs:
        k = int(removal_rate * g.num_nodes)
        k = min(k, g.num_nodes - 2)
        if k <= 0:
            out.append(g)
            continue
        drop = set(rng.choice(g.num_nodes, size=k, replace=False).tolist())
        keep = [v for v in range(g.num_nodes) if v not in drop]
        out.append(keep_nodes(g, keep))
    return out


def defend_filter(
    train_graphs: list[Graph], detector: Detector, quantile: float
) -> tuple[list[Graph], list[int]]:
    """Drop the ceil(q * n) highest-scoring graphs.

    Returns (survivors, dropped graph ids). Ties at the cut rank by
    ascending graph id, so the outcome is deterministic.
    """
    if not (0.0 <= quantile < 1.0):
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    n_drop = math.ceil(quantile * len(train_graphs))
    if n_drop == 0:
        return list(train_graphs), []
    ranked = sorted(
        train_graphs, key=lambda g: (-anomaly_score(detector, g), g.id)
    )
    dropped = {g.id for g in ranked[:n_drop]}
    kept = [g for g in train_graphs if g.id not in dropped]
    return kept, sorted(dropped)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Flat bundle of the headline metrics for one attack run."""

    method: str
    dataset_name: str
    seed: int
    surrogate_arch: str
    target_arch: str
    target_label: int
    asr: float
    cad: float
    clean_accuracy: float
    backdoor_accuracy: float
    auc: float
    clean_scores: list[float]
    poisoned_scores: list[float]
    mean_score_shift: float
    stealth_budget: float | None = None
    stealth_exceeded: bool | None = None
    poisoned_count: int = 0
    label_diffs: int = 0
    config_echo: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "dataset_name": self.dataset_name,
            "seed": self.seed,
            "surrogate_arch": self.surrogate_arch,
            "target_arch": self.target_arch,
            "target_label": self.target_label,
            "asr": self.asr,
            "cad": self.cad,
            "clean_accuracy": self.clean_accuracy,
            "backdoor_accuracy": self.backdoor_accuracy,
            "auc": self.auc,
            "clean_scores": self.clean_scores,
            "poisoned_scores": self.poisoned_scores,
            "mean_score_shift": self.mean_score_shift,
            "stealth_budget": self.stealth_budget,
            "stealth_exceeded": self.stealth_exceeded,
            "poisoned_count": self.poisoned_count,
            "label_diffs": self.label_diffs,
            "config_echo": self.config_echo,
            "extra": self.extra,
        }


def build_metrics_report(
    *,
    method: str,
    clean_dataset: GraphDataset,
    poisoned_dataset: GraphDataset,
    ledger,
    victim,
    clean_model,
    pipeline,
    detector: Detector,
    seed: int,
    surrogate_arch: str,
    target_arch: str,
    stealth_budget: float | None = None,
    config_echo: dict | None = None,
    extra: dict | None = None,
) -> MetricsReport:
    """Standard measurement pass shared by every attack runner.

    The detector scores the poisoned train graphs against the untouched
    train graphs; ASR/CAD use the clean test split.
    """
    y_t = clean_dataset.target_label
    test = clean_dataset.test_graphs()
    clean_acc = neuralnet.accuracy(clean_model, test)
    backdoor_acc = neuralnet.accuracy(victim, test)
    attack_rate = asr(victim, test, pipeline, y_t)

    poisoned_ids = set(ledger.poisoned_ids())
    poisoned_graphs = [poisoned_dataset.graph(i) for i in sorted(poisoned_ids)]
    untouched = [
        g for g in poisoned_dataset.train_graphs() if g.id not in poisoned_ids
    ]
    clean_scores = score_graphs(detector, untouched)
    poisoned_scores = score_graphs(detector, poisoned_graphs)
    ranking_auc = auc(clean_scores, poisoned_scores)
    shift = float(np.mean(poisoned_scores) - np.mean(clean_scores)) if poisoned_scores else 0.0
    exceeded = None if stealth_budget is None else bool(shift > stealth_budget)

    return MetricsReport(
        method=method,
        dataset_name=clean_dataset.name,
        seed=seed,
        surrogate_arch=surrogate_arch,
        target_arch=target_arch,
        target_label=y_t,
        asr=attack_rate,
        cad=cad(clean_acc, backdoor_acc),
        clean_accuracy=clean_acc,
        backdoor_accuracy=backdoor_acc,
        auc=ranking_auc,
        clean_scores=clean_scores,
        poisoned_scores=poisoned_scores,
        mean_score_shift=shift,
        stealth_budget=stealth_budget,
        stealth_exceeded=exceeded,
        poisoned_count=len(poisoned_graphs),
        label_diffs=ledger.label_diff_count(poisoned_dataset),
        config_echo=dict(config_echo or {}),
        extra=dict(extra or {}),
    )
