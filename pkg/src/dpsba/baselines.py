"""Comparison attacks: random universal triggers and motif-search triggers.

Two families. The Erdos-Renyi baseline draws one fixed random trigger
topology and stamps it into sampled hosts, either flipping labels to the
target class (dirty) or restricting hosts to the target class (clean).
The motif baseline counts every connected induced subgraph on up to four
vertices across the clean train graphs and uses the rarest or the most
frequent four-node class as a fixed trigger. Both use the clean-train
mean feature vector for trigger node features, so they probe structure
only.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import evaluation, neuralnet, trigger
from .graphcore import Graph, GraphDataset


class BaselineError(RuntimeError):
    pass


# Connected isomorphism classes on 2..4 vertices, in canonical order:
# node count, then edge count, then sorted degree sequence.
MOTIF_KEYS = (
    "edge",
    "path-3",
    "triangle",
    "star-4",
    "path-4",
    "cycle-4",
    "paw",
    "diamond",
    "clique-4",
)

MOTIF_KEYS_4 = ("star-4", "path-4", "cycle-4", "paw", "diamond", "clique-4")

# Representative edge lists used when a motif becomes a trigger topology.
MOTIF_EDGES = {
    "edge": ((0, 1),),
    "path-3": ((0, 1), (1, 2)),
    "triangle": ((0, 1), (0, 2), (1, 2)),
    "star-4": ((0, 1), (0, 2), (0, 3)),
    "path-4": ((0, 1), (1, 2), (2, 3)),
    "cycle-4": ((0, 1), (1, 2), (2, 3), (0, 3)),
    "paw": ((0, 1), (0, 2), (1, 2), (2, 3)),
    "diamond": ((0, 1), (0, 2), (1, 2), (1, 3), (2, 3)),
    "clique-4": ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}

MOTIF_SIZES = {k: max(max(e) for e in MOTIF_EDGES[k]) + 1 for k in MOTIF_KEYS}

# Degree sequence plus edge count pins the class on <= 4 vertices.
_CLASS_BY_SHAPE = {
    (2, 1, (1, 1)): "edge",
    (3, 2, (1, 1, 2)): "path-3",
    (3, 3, (2, 2, 2)): "triangle",
    (4, 3, (1, 1, 1, 3)): "star-4",
    (4, 3, (1, 1, 2, 2)): "path-4",
    (4, 4, (2, 2, 2, 2)): "cycle-4",
    (4, 4, (1, 2, 2, 3)): "paw",
    (4, 5, (2, 2, 3, 3)): "diamond",
    (4, 6, (3, 3, 3, 3)): "clique-4",
}


@dataclass
class MotifTable:
    """Occurrence counts of each canonical motif class over a graph set."""

    counts: dict[str, int]

    def __post_init__(self):
        if set(self.counts) != set(MOTIF_KEYS):
            raise ValueError("counts must cover exactly the canonical motif keys")
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("motif counts must be >= 0")

    def select(self, mode: str) -> str:
        """Rarest or most frequent 4-node class; ties break by key order."""
        if mode not in ("rare", "frequent"):
            raise ValueError(f"mode must be 'rare' or 'frequent', got {mode!r}")
        best = MOTIF_KEYS_4[0]
        for key in MOTIF_KEYS_4[1:]:
            if mode == "rare":
                if self.counts[key] < self.counts[best]:
                    best = key
            else:
                if self.counts[key] > self.counts[best]:
                    best = key
        return best

    def to_dict(self) -> dict[str, int]:
        return {k: self.counts[k] for k in MOTIF_KEYS}


def _classify_subset(nodes: tuple[int, ...], neighbor_masks: list[int]) -> str | None:
    """Canonical class of the induced subgraph, or None if disconnected."""
    k = len(nodes)
    subset_mask = 0
    for v in nodes:
        subset_mask |= 1 << v
    degrees = []
    edge_count = 0
    for v in nodes:
        d = bin(neighbor_masks[v] & subset_mask).count("1")
        degrees.append(d)
        edge_count += d
    edge_count //= 2
    if edge_count < k - 1:
        return None
    # Bitmask flood fill from the first vertex.
    reach = 1 << nodes[0]
    while True:
        grown = reach
        for v in nodes:
            if reach & (1 << v):
                grown |= neighbor_masks[v] & subset_mask
        if grown == reach:
            break
        reach = grown
    if reach != subset_mask:
        return None
    return _CLASS_BY_SHAPE[(k, edge_count, tuple(sorted(degrees)))]


def _graph_motif_counts(graph: Graph) -> dict[str, int]:
    """Exhaustive induced-subgraph counts for one graph. Pure; mergeable."""
    masks = [0] * graph.num_nodes
    for u, v in graph.edges:
        masks[u] |= 1 << v
        masks[v] |= 1 << u
    counts = dict.fromkeys(MOTIF_KEYS, 0)
    for k in (2, 3, 4):
        if graph.num_nodes < k:
            continue
        for nodes in combinations(range(graph.num_nodes), k):
            key = _classify_subset(nodes, masks)
            if key is not None:
                counts[key] += 1
    return counts


def count_motifs(graphs: list[Graph], max_size: int = 4) -> MotifTable:
    """Exact connected induced-subgraph counts summed over all graphs."""
    if not graphs:
        raise ValueError("graphs must be non-empty")
    if max_size != 4:
        raise ValueError("only max_size=4 is supported")
    total = dict.fromkeys(MOTIF_KEYS, 0)
    for g in graphs:
        for key, c in _graph_motif_counts(g).items():
            total[key] += c
    return MotifTable(counts=total)


def mean_feature_vector(graphs: list[Graph]) -> np.ndarray:
    """Column mean over every node feature row in the set."""
    if not graphs:
        raise ValueError("graphs must be non-empty")
    stacked = np.vstack([g.features for g in graphs])
    return stacked.mean(axis=0)


def er_trigger(
    trigger_size: int,
    edge_prob: float,
    seed: int,
    mean_features: np.ndarray,
) -> trigger.TriggerInstance:
    """One fixed random trigger: ER(edge_prob) topology, mean-feature rows."""
    if trigger_size < 2:
        raise ValueError(f"trigger_size must be >= 2, got {trigger_size}")
    if not (0.0 <= edge_prob <= 1.0):
        raise ValueError(f"edge_prob must be in [0, 1], got {edge_prob}")
    mean_features = np.asarray(mean_features, dtype=np.float64)
    if mean_features.ndim != 1:
        raise ValueError("mean_features must be a flat vector")
    rng = np.random.default_rng(seed)
    adj = np.zeros((trigger_size, trigger_size), dtype=np.float64)
    for i in range(trigger_size):
        for j in range(i + 1, trigger_size):
            if rng.random() < edge_prob:
                adj[i, j] = adj[j, i] = 1.0
    feats = np.tile(mean_features, (trigger_size, 1))
    return trigger.TriggerInstance(adjacency=adj, features=feats)


def motif_trigger(
    table: MotifTable, mode: str, mean_features: np.ndarray
) -> tuple[str, trigger.TriggerInstance]:
    """Fixed trigger built from the selected 4-node motif class."""
    key = table.select(mode)
    size = MOTIF_SIZES[key]
    adj = np.zeros((size, size), dtype=np.float64)
    for u, v in MOTIF_EDGES[key]:
        adj[u, v] = adj[v, u] = 1.0
    feats = np.tile(np.asarray(mean_features, dtype=np.float64), (size, 1))
    return key, trigger.TriggerInstance(adjacency=adj, features=feats)


@dataclass
class BaselineRun:
    """Artifacts of one baseline attack run."""

    poisoned_dataset: GraphDataset
    model: object  # victim classifier trained on the poisoned data
    ledger: trigger.PoisonLedger
    trigger_instance: trigger.TriggerInstance
    selected_ids: list[int]
    method: str
    surrogate_arch: str
    base_seed: int
    sever_external: bool = False
    motif_table: MotifTable | None = None
    motif_key: str | None = None

    def pipeline(self) -> trigger.FixedTriggerPipeline:
        return trigger.FixedTriggerPipeline(
            trigger=self.trigger_instance,
            seed=self.base_seed,
            sever_external=self.sever_external,
        )


def _sample_hosts(
    dataset: GraphDataset,
    target_label: int,
    poison_fraction: float,
    min_nodes: int,
    clean_label: bool,
    rng: np.random.Generator,
) -> list[int]:
    if clean_label:
        eligible = [
            g.id
            for g in dataset.train_graphs()
            if g.label == target_label and g.num_nodes >= min_nodes
        ]
    else:
        eligible = [
            g.id
            for g in dataset.train_graphs()
            if g.label != target_label and g.num_nodes >= min_nodes
        ]
    if not eligible:
        raise BaselineError("no eligible host graphs for baseline injection")
    eligible.sort()
    count = math.ceil(poison_fraction * len(eligible))
    picks = rng.choice(len(eligible), size=count, replace=False)
    return sorted(eligible[i] for i in picks.tolist())


def _inject_fixed(
    dataset: GraphDataset,
    host_ids: list[int],
    instance: trigger.TriggerInstance,
    target_label: int,
    flip_labels: bool,
    seed: int,
    sever_external: bool,
) -> tuple[GraphDataset, trigger.PoisonLedger]:
    ledger = trigger.PoisonLedger()
    replacements: dict[int, Graph] = {}
    m = instance.size
    for gid in host_ids:
        host = dataset.graph(gid)
        rng = np.random.default_rng(np.random.SeedSequence((seed, gid)))
        nodes = sorted(rng.choice(host.num_nodes, size=m, replace=False).tolist())
        poisoned = trigger.inject(host, nodes, instance, ledger, sever_external=sever_external)
        if flip_labels:
            poisoned = dataclasses.replace(poisoned, label=target_label)
        replacements[gid] = poisoned
    return dataset.replace_graphs(replacements), ledger


def _finish_baseline(
    run: BaselineRun,
    clean_dataset: GraphDataset,
    config,
    detector: evaluation.Detector | None,
    clean_model,
    detector_kind: str = "stats-mahalanobis",
    detector_per_label: bool = True,
) -> evaluation.MetricsReport:
    if clean_model is None:
        clean_model = neuralnet.train_classifier(
            clean_dataset,
            run.surrogate_arch,
            config.train_config(config.victim_epochs, config.seed + 1),
            hidden_dim=config.hidden_dim,
            num_layers=config.num_layers,
        )
    if detector is None:
        detector = evaluation.audit_detector(
            run.poisoned_dataset, config.seed, detector_kind, detector_per_label
        )
    return evaluation.build_metrics_report(
        method=run.method,
        clean_dataset=clean_dataset,
        poisoned_dataset=run.poisoned_dataset,
        ledger=run.ledger,
        victim=run.model,
        clean_model=clean_model,
        pipeline=run.pipeline(),
        detector=detector,
        seed=config.seed,
        surrogate_arch=run.surrogate_arch,
        target_arch=run.surrogate_arch,
        stealth_budget=config.stealth_budget,
        extra=(
            {"motif_table": run.motif_table.to_dict(), "motif_key": run.motif_key}
            if run.motif_table is not None
            else {}
        ),
    )


def run_erb(
    dataset: GraphDataset,
    config,
    clean_label: bool = False,
    surrogate_arch: str = "gcn-mean",
    detector: evaluation.Detector | None = None,
    clean_model=None,
    detector_kind: str = "stats-mahalanobis",
    detector_per_label: bool = True,
) -> tuple[BaselineRun, evaluation.MetricsReport]:
    """Random-trigger attack. Dirty mode samples non-target hosts and flips
    their labels to the target; clean mode stamps target-class hosts only.
    """
    config.validate()
    mean_feats = mean_feature_vector(dataset.train_graphs())
    instance = er_trigger(
        config.trigger_size, config.er_edge_prob, config.seed + 10, mean_feats
    )
    rng = np.random.default_rng(config.seed + 8)
    hosts = _sample_hosts(
        dataset,
        config.target_label,
        config.poison_fraction,
        config.trigger_size,
        clean_label,
        rng,
    )
    poisoned, ledger = _inject_fixed(
        dataset,
        hosts,
        instance,
        config.target_label,
        flip_labels=not clean_label,
        seed=config.seed + 9,
        sever_external=config.sever_external_edges,
    )
    victim = neuralnet.train_classifier(
        poisoned,
        surrogate_arch,
        config.train_config(config.victim_epochs, config.seed + 1),
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
    )
    run = BaselineRun(
        poisoned_dataset=poisoned,
        model=victim,
        ledger=ledger,
        trigger_instance=instance,
        selected_ids=hosts,
        method="erb-clean" if clean_label else "erb",
        surrogate_arch=surrogate_arch,
        base_seed=config.seed,
        sever_external=config.sever_external_edges,
    )
    report = _finish_baseline(
        run, dataset, config, detector, clean_model, detector_kind, detector_per_label
    )
    return run, report


def run_motif(
    dataset: GraphDataset,
    config,
    mode: str = "rare",
    surrogate_arch: str = "gcn-mean",
    detector: evaluation.Detector | None = None,
    clean_model=None,
    detector_kind: str = "stats-mahalanobis",
    detector_per_label: bool = True,
) -> tuple[BaselineRun, evaluation.MetricsReport]:
    """Motif-search attack: rarest (or most frequent) 4-node class as trigger,
    dirty-label injection into non-target hosts.
    """
    config.validate()
    train = dataset.train_graphs()
    if not any(g.num_nodes >= 4 for g in train):
        raise BaselineError("motif baseline needs at least one train graph with 4 nodes")
    table = count_motifs(train)
    mean_feats = mean_feature_vector(train)
    key, instance = motif_trigger(table, mode, mean_feats)
    rng = np.random.default_rng(config.seed + 8)
    hosts = _sample_hosts(
        dataset,
        config.target_label,
        config.poison_fraction,
        instance.size,
        clean_label=False,
        rng=rng,
    )
    poisoned, ledger = _inject_fixed(
        dataset,
        hosts,
        instance,
        config.target_label,
        flip_labels=True,
        seed=config.seed + 9,
        sever_external=config.sever_external_edges,
    )
    victim = neuralnet.train_classifier(
        poisoned,
        surrogate_arch,
        config.train_config(config.victim_epochs, config.seed + 1),
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
    )
    run = BaselineRun(
        poisoned_dataset=poisoned,
        model=victim,
        ledger=ledger,
        trigger_instance=instance,
        selected_ids=hosts,
        method="motif" if mode == "rare" else "motif-s",
        surrogate_arch=surrogate_arch,
        base_seed=config.seed,
        sever_external=config.sever_external_edges,
        motif_table=table,
        motif_key=key,
    )
    report = _finish_baseline(
        run, dataset, config, detector, clean_model, detector_kind, detector_per_label
    )
    return run, report
