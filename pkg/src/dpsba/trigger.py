"""Learnable trigger generators, injection and the poison ledger.

The trigger for an M-node region is produced by two tiny parameterized
transforms of the region's original content:

* topology: H' = sigmoid(W1 H + b1) on the region's (M, M) adjacency block,
  symmetrized as A = (H' + H'^T) / 2 with a zero diagonal, then thresholded
  at 0.5 with a straight-through estimator so gradients pass the hard step.
* features: X' = relu(X W2^T + b2) applied row-wise to the region's
  original feature rows.

``inject`` replaces the region's internal edges and feature rows, keeps all
edges to the rest of the graph, and never touches the label. Every
injection is recorded in a ``PoisonLedger`` entry that can rebuild the
original graph exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import neuralnet, selection
from .graphcore import Graph, atomic_write_text


class GeneratorError(RuntimeError):
    """Generator produced a non-finite artifact."""


@dataclass
class TriggerGenerators:
    """Parameter container for the topology and feature transforms."""

    w_topology: torch.Tensor  # (M, M)
    b_topology: torch.Tensor  # (M,)
    w_feature: torch.Tensor  # (F, F)
    b_feature: torch.Tensor  # (F,)
    topology_activation: str = "sigmoid"
    feature_activation: str = "relu"

    @property
    def trigger_size(self) -> int:
        return self.w_topology.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_feature.shape[0]

    def topology_parameters(self) -> list[torch.Tensor]:
        return [self.w_topology, self.b_topology]

    def feature_parameters(self) -> list[torch.Tensor]:
        return [self.w_feature, self.b_feature]

    def detached_copy(self) -> "TriggerGenerators":
        return TriggerGenerators(
            w_topology=self.w_topology.detach().clone(),
            b_topology=self.b_topology.detach().clone(),
            w_feature=self.w_feature.detach().clone(),
            b_feature=self.b_feature.detach().clone(),
            topology_activation=self.topology_activation,
            feature_activation=self.feature_activation,
        )


INIT_SCALE = 0.1


def init_generators(trigger_size: int, feature_dim: int, seed: int) -> TriggerGenerators:
    """Weights uniform in (-0.1, 0.1), biases zero, deterministic in seed."""
    if trigger_size < 2:
        raise ValueError(f"trigger_size must be >= 2, got {trigger_size}")
    if feature_dim < 1:
        raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
    gen = torch.Generator()
    gen.manual_seed(seed & 0x7FFFFFFFFFFFFFFF)

    def uniform(shape):
        t = torch.empty(shape, dtype=torch.float64)
        t.uniform_(-INIT_SCALE, INIT_SCALE, generator=gen)
        t.requires_grad_(True)
        return t

    def zeros(shape):
        t = torch.zeros(shape, dtype=torch.float64)
        t.requires_grad_(True)
        return t

    return TriggerGenerators(
        w_topology=uniform((trigger_size, trigger_size)),
        b_topology=zeros((trigger_size,)),
        w_feature=uniform((feature_dim, feature_dim)),
        b_feature=zeros((feature_dim,)),
    )


class _StraightThroughBinarize(torch.autograd.Function):
    @staticmethod
    def forward(ctx, a):
        return (a > 0.5).to(a.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output


def binarize(a: torch.Tensor) -> torch.Tensor:
    """Hard threshold at 0.5; gradients pass through unchanged."""
    return _StraightThroughBinarize.apply(a)


def soft_topology(gens: TriggerGenerators, region_adj: torch.Tensor) -> torch.Tensor:
    """Symmetrized soft adjacency in (0, 1) with a zero diagonal."""
    m = gens.trigger_size
    if region_adj.shape != (m, m):
        raise ValueError(
            f"region adjacency must be ({m}, {m}), got {tuple(region_adj.shape)}"
        )
    if gens.topology_activation != "sigmoid":
        raise ValueError(f"unsupported topology activation {gens.topology_activation!r}")
    h = torch.sigmoid(gens.w_topology @ region_adj + gens.b_topology.unsqueeze(1))
    a = 0.5 * (h + h.T)
    a = a * (1.0 - torch.eye(m, dtype=a.dtype))
    if not torch.isfinite(a).all():
        raise GeneratorError("soft topology produced non-finite entries")
    return a


def generate_features(gens: TriggerGenerators, region_features: torch.Tensor) -> torch.Tensor:
    """Row-wise feature transform of the region's original rows."""
    f = gens.feature_dim
    if region_features.ndim != 2 or region_features.shape[1] != f:
        raise ValueError(
            f"region features must be (M, {f}), got {tuple(region_features.shape)}"
        )
    if gens.feature_activation != "relu":
        raise ValueError(f"unsupported feature activation {gens.feature_activation!r}")
    out = torch.relu(region_features @ gens.w_feature.T + gens.b_feature)
    if not torch.isfinite(out).all():
        raise GeneratorError("feature generator produced non-finite entries")
    return out


@dataclass
class TriggerInstance:
    """One concrete trigger: binary internal adjacency plus feature rows.

    ``soft_adjacency`` (pre-binarization A) and ``transform_output`` (H')
    are kept when the instance came from the learned generators; fixed
    baseline triggers leave them None.
    """

    adjacency: np.ndarray  # (M, M) 0/1 symmetric, zero diagonal
    features: np.ndarray  # (M, F)
    soft_adjacency: np.ndarray | None = None
    transform_output: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"trigger adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("trigger adjacency must be symmetric")
        if np.trace(a) != 0:
            raise ValueError("trigger adjacency must have a zero diagonal")
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("trigger adjacency entries must be 0 or 1")
        self.adjacency = a
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ValueError(
                f"trigger features must be ({a.shape[0]}, F), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("trigger features must be finite")
        self.features = x

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]


def region_tensors(graph: Graph, node_ids: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    """(M, M) internal adjacency block and (M, F) feature rows of a region."""
    _validate_region(graph, node_ids)
    idx = np.asarray(node_ids, dtype=np.int64)
    block = graph.adjacency()[np.ix_(idx, idx)]
    rows = graph.features[idx, :]
    return (
        torch.from_numpy(np.array(block, dtype=np.float64)),
        torch.from_numpy(np.array(rows, dtype=np.float64)),
    )


def build_trigger(
    gens: TriggerGenerators,
    graph: Graph,
    node_ids: list[int],
    use_topology: bool = True,
    use_features: bool = True,
) -> TriggerInstance:
    """Materialize the generators' output for one region (no gradients).

    Disabling a component passes the region's original content through,
    which is how ablation variants drop one generator.
    """
    region_adj, region_x = region_tensors(graph, node_ids)
    with torch.no_grad():
        if use_topology:
            soft = soft_topology(gens, region_adj)
            hard = binarize(soft)
            soft_np = soft.numpy().copy()
        else:
            hard = region_adj
            soft_np = None
        feats = generate_features(gens, region_x) if use_features else region_x
    return TriggerInstance(
        adjacency=hard.numpy().copy(),
        features=feats.numpy().copy(),
        soft_adjacency=soft_np,
        transform_output=None,
    )


# ---------------------------------------------------------------------------
# Injection and the ledger
# ---------------------------------------------------------------------------


def _validate_region(graph: Graph, node_ids: list[int]) -> None:
    if len(set(node_ids)) != len(node_ids):
        raise ValueError(f"graph {graph.id}: duplicate trigger node ids {node_ids}")
    if not node_ids:
        raise ValueError("trigger region must be non-empty")
    for v in node_ids:
        if not (0 <= v < graph.num_nodes):
            raise ValueError(
                f"graph {graph.id}: trigger node {v} out of range "
                f"(N={graph.num_nodes})"
            )


@dataclass
class LedgerEntry:
    """Everything needed to audit and undo one injection."""

    graph_id: int
    node_ids: list[int]
    original_label: int
    original_internal_edges: list[tuple[int, int]]
    original_features: np.ndarray  # (M, F) rows at node_ids
    original_external_edges: list[tuple[int, int]]
    severed_external: bool
    trigger: TriggerInstance


class PoisonLedger:
    """Audit log of injections, one entry per poisoned graph."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []
        self._by_graph: dict[int, LedgerEntry] = {}

    def record(self, entry: LedgerEntry) -> None:
        if entry.graph_id in self._by_graph:
            raise ValueError(f"ledger already has an entry for graph {entry.graph_id}")
        self.entries.append(entry)
        self._by_graph[entry.graph_id] = entry

    def entry_for(self, graph_id: int) -> LedgerEntry:
        try:
            return self._by_graph[graph_id]
        except KeyError:
            raise KeyError(f"no ledger entry for graph {graph_id}") from None

    def poisoned_ids(self) -> list[int]:
        return [e.graph_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def label_diff_count(self, dataset) -> int:
        """How many poisoned graphs carry a label differing from the original."""
        return sum(
            1
            for e in self.entries
            if dataset.graph(e.graph_id).label != e.original_label
        )

    def restore(self, poisoned: Graph) -> Graph:
        """Rebuild the pre-injection graph from a poisoned one."""
        entry = self.entry_for(poisoned.id)
        region = set(entry.node_ids)
        kept = {
            e
            for e in poisoned.edges
            if not (e[0] in region and e[1] in region)
        }
        if entry.severed_external:
            kept = {
                e
                for e in kept
                if not (e[0] in region) ^ (e[1] in region)
            }
            kept.update(entry.original_external_edges)
        edges = kept | set(entry.original_internal_edges)
        feats = np.array(poisoned.features, dtype=np.float64)
        for row, v in enumerate(entry.node_ids):
            feats[v, :] = entry.original_features[row, :]
        return Graph(
            id=poisoned.id,
            num_nodes=poisoned.num_nodes,
            edges=frozenset(edges),
            features=feats,
            label=entry.original_label,
        )

    def to_dict(self) -> dict:
        return {
            "entries": [
                {
                    "graph_id": e.graph_id,
                    "node_ids": list(e.node_ids),
                    "original_label": e.original_label,
                    "original_internal_edges": [list(x) for x in e.original_internal_edges],
                    "original_features": e.original_features.tolist(),
                    "original_external_edges": [list(x) for x in e.original_external_edges],
                    "severed_external": e.severed_external,
                    "trigger": {
                        "adjacency": e.trigger.adjacency.tolist(),
                        "features": e.trigger.features.tolist(),
                        "soft_adjacency": (
                            e.trigger.soft_adjacency.tolist()
                            if e.trigger.soft_adjacency is not None
                            else None
                        ),
                    },
                }
                for e in self.entries
            ]
        }


def inject(
    graph: Graph,
    node_ids: list[int],
    trigger: TriggerInstance,
    ledger: PoisonLedger | None = None,
    sever_external: bool = False,
) -> Graph:
    """Replace the region's internal edges and feature rows with the trigger.

    Edges between the region and the rest of the graph are preserved unless
    ``sever_external`` is set. The label and node count never change. Row i
    of the trigger maps to ``node_ids[i]``.
    """
    _validate_region(graph, node_ids)
    m = len(node_ids)
    if trigger.size != m:
        raise ValueError(
            f"trigger size {trigger.size} does not match region size {m}"
        )
    if trigger.features.shape[1] != graph.features.shape[1]:
        raise ValueError(
            f"trigger feature width {trigger.features.shape[1]} does not match "
            f"graph feature width {graph.features.shape[1]}"
        )
    region = set(node_ids)
    internal = sorted(
        e for e in graph.edges if e[0] in region and e[1] in region
    )
    external = sorted(
        e for e in graph.edges if (e[0] in region) ^ (e[1] in region)
    )
    edges = {
        e
        for e in graph.edges
        if not (e[0] in region and e[1] in region)
    }
    if sever_external:
        edges -= set(external)
    for i in range(m):
        for j in range(i + 1, m):
            if trigger.adjacency[i, j] > 0.5:
                u, v = node_ids[i], node_ids[j]
                edges.add((u, v) if u < v else (v, u))
    feats = np.array(graph.features, dtype=np.float64)
    for row, v in enumerate(node_ids):
        feats[v, :] = trigger.features[row, :]
    poisoned = Graph(
        id=graph.id,
        num_nodes=graph.num_nodes,
        edges=frozenset(edges),
        features=feats,
        label=graph.label,
    )
    if ledger is not None:
        ledger.record(
            LedgerEntry(
                graph_id=graph.id,
                node_ids=list(node_ids),
                original_label=graph.label,
                original_internal_edges=internal,
                original_features=np.array(graph.features[list(node_ids), :]),
                original_external_edges=external,
                severed_external=sever_external,
                trigger=trigger,
            )
        )
    return poisoned


# ---------------------------------------------------------------------------
# Differentiable poisoned tensors
# ---------------------------------------------------------------------------


def poisoned_tensors(
    graph: Graph,
    node_ids: list[int],
    gens: TriggerGenerators,
    train_topology: bool = False,
    train_features: bool = False,
    use_topology: bool = True,
    use_features: bool = True,
    relax_binarize: bool = False,
    sever_external: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(adjacency, features) of the poisoned graph as a differentiable pair.

    Gradients flow back to the generator parameters named by the train_*
    flags; the other component is detached so alternating phases never leak
    gradients into the frozen generator. ``relax_binarize`` swaps the hard
    threshold for the soft adjacency, which is the reference path for
    finite-difference checks.
    """
    _validate_region(graph, node_ids)
    base_adj, base_x = neuralnet.graph_tensors(graph)
    n = graph.num_nodes
    m = len(node_ids)
    idx = torch.tensor(node_ids, dtype=torch.long)
    sel = torch.zeros((m, n), dtype=torch.float64)
    sel[torch.arange(m), idx] = 1.0
    ind = sel.sum(dim=0)  # (N,) 0/1 region indicator
    block_mask = ind.unsqueeze(1) * ind.unsqueeze(0)

    region_adj, region_x = region_tensors(graph, node_ids)
    if use_topology:
        soft = soft_topology(gens, region_adj)
        block = soft if relax_binarize else binarize(soft)
        if not train_topology:
            block = block.detach()
    else:
        block = region_adj
    if use_features:
        rows = generate_features(gens, region_x)
        if not train_features:
            rows = rows.detach()
    else:
        rows = region_x

    adj = base_adj * (1.0 - block_mask) + sel.T @ block @ sel
    if sever_external:
        off_mask = ind.unsqueeze(1) * (1.0 - ind).unsqueeze(0)
        adj = adj * (1.0 - off_mask - off_mask.T)
    x = base_x * (1.0 - ind).unsqueeze(1) + sel.T @ rows
    return adj, x


# ---------------------------------------------------------------------------
# Inference-time crafting
# ---------------------------------------------------------------------------


def _region_rng(seed: int, graph_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, graph_id)))


@dataclass
class TriggerPipeline:
    """Crafts a trigger for any graph the way the attack does at test time.

    ``placement`` is "importance" for the centrality + ablation selection
    driven by the surrogate, or "random" for the location ablation.
    """

    surrogate: object
    generators: TriggerGenerators
    selection_config: selection.SelectionConfig
    use_topology: bool = True
    use_features: bool = True
    placement: str = "importance"
    seed: int = 0
    sever_external: bool = False

    @property
    def trigger_size(self) -> int:
        return self.selection_config.trigger_size

    def choose_nodes(self, graph: Graph) -> list[int]:
        m = self.selection_config.trigger_size
        if graph.num_nodes < m:
            raise ValueError(
                f"graph {graph.id} has {graph.num_nodes} nodes, fewer than "
                f"trigger size {m}"
            )
        if self.placement == "random":
            rng = _region_rng(self.seed, graph.id)
            return sorted(rng.choice(graph.num_nodes, size=m, replace=False).tolist())
        if self.placement != "importance":
            raise ValueError(f"unknown placement {self.placement!r}")
        return selection.select_trigger_nodes(self.surrogate, graph, self.selection_config)

    def poison(self, graph: Graph, ledger: PoisonLedger | None = None) -> Graph:
        node_ids = self.choose_nodes(graph)
        instance = build_trigger(
            self.generators,
            graph,
            node_ids,
            use_topology=self.use_topology,
            use_features=self.use_features,
        )
        return inject(
            graph, node_ids, instance, ledger, sever_external=self.sever_external
        )


@dataclass
class FixedTriggerPipeline:
    """Baseline crafting: one universal trigger at random positions."""

    trigger: TriggerInstance
    seed: int = 0
    sever_external: bool = False

    @property
    def trigger_size(self) -> int:
        return self.trigger.size

    def choose_nodes(self, graph: Graph) -> list[int]:
        m = self.trigger.size
        if graph.num_nodes < m:
            raise ValueError(
                f"graph {graph.id} has {graph.num_nodes} nodes, fewer than "
                f"trigger size {m}"
            )
        rng = _region_rng(self.seed, graph.id)
        return sorted(rng.choice(graph.num_nodes, size=m, replace=False).tolist())

    def poison(self, graph: Graph, ledger: PoisonLedger | None = None) -> Graph:
        node_ids = self.choose_nodes(graph)
        return inject(
            graph, node_ids, self.trigger, ledger, sever_external=self.sever_external
        )


# ---------------------------------------------------------------------------
# Generator checkpoints
# ---------------------------------------------------------------------------

GENERATORS_FORMAT = "trigger-generators/v1"


def generators_to_json(gens: TriggerGenerators) -> str:
    doc = {
        "format": GENERATORS_FORMAT,
        "trigger_size": gens.trigger_size,
        "feature_dim": gens.feature_dim,
        "topology_activation": gens.topology_activation,
        "feature_activation": gens.feature_activation,
        "w_topology": gens.w_topology.detach().tolist(),
        "b_topology": gens.b_topology.detach().tolist(),
        "w_feature": gens.w_feature.detach().tolist(),
        "b_feature": gens.b_feature.detach().tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def generators_from_json(text: str) -> TriggerGenerators:
    doc = json.loads(text)
    if doc.get("format") != GENERATORS_FORMAT:
        raise ValueError(f"unknown generator format tag {doc.get('format')!r}")

    def t(key):
        out = torch.tensor(doc[key], dtype=torch.float64)
        out.requires_grad_(True)
        return out

    return TriggerGenerators(
        w_topology=t("w_topology"),
        b_topology=t("b_topology"),
        w_feature=t("w_feature"),
        b_feature=t("b_feature"),
        topology_activation=doc["topology_activation"],
        feature_activation=doc["feature_activation"],
    )


def save_generators(gens: TriggerGenerators, path: str | Path) -> None:
    atomic_write_text(path, generators_to_json(gens))


def load_generators(path: str | Path) -> TriggerGenerators:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing generator checkpoint: {path}")
    return generators_from_json(path.read_text())
