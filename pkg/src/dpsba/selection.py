"""Hard-sample selection and trigger-location selection.

Poisoning candidates are the target-class train graphs the surrogate is
least confident about; trigger positions inside one graph are chosen by
degree-centrality pre-selection followed by a node-ablation importance
score. All tie-breaks go to the lower graph or node id, so selection is a
pure function of (model, data, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import neuralnet
from .graphcore import Graph, GraphDataset, degree_centrality, remove_node


@dataclass
class SelectionConfig:
    poison_fraction: float = 0.05
    trigger_size: int = 4
    candidate_multiplier: int = 2
    importance_mode: str = "logit-l1"  # or "target-logit"
    target_class: int | None = None

    def validate(self) -> None:
        if not (0.0 < self.poison_fraction <= 1.0):
            raise ValueError(
                f"poison_fraction must be in (0, 1], got {self.poison_fraction}"
            )
        if self.trigger_size < 2:
            raise ValueError(f"trigger_size must be >= 2, got {self.trigger_size}")
        if self.candidate_multiplier < 1:
            raise ValueError("candidate_multiplier must be >= 1")
        if self.importance_mode not in ("logit-l1", "target-logit"):
            raise ValueError(
                f"importance_mode must be 'logit-l1' or 'target-logit', "
                f"got {self.importance_mode!r}"
            )
        if self.importance_mode == "target-logit" and self.target_class is None:
            raise ValueError("target-logit importance needs target_class")


def softmax_probabilities(logits: np.ndarray) -> np.ndarray:
    """Stable softmax (max subtracted before exponentiation)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def confidence(model, graph: Graph, target_label: int) -> float:
    """Softmax probability the model assigns to ``target_label``."""
    logits = neuralnet.forward(model, graph)
    if not (0 <= target_label < logits.shape[0]):
        raise ValueError(f"target_label {target_label} outside class range")
    return float(softmax_probabilities(logits)[target_label])


def select_hard_samples(
    model,
    dataset: GraphDataset,
    target_label: int,
    poison_fraction: float,
    min_nodes: int = 2,
) -> list[int]:
    """Ids of the ceil(p * count) least-confident eligible train graphs.

    Eligible means: in the train split, labeled ``target_label`` and large
    enough to host a trigger (num_nodes >= min_nodes). The returned ids are
    ordered by ascending confidence, ties by ascending id.
    """
    if not (0.0 < poison_fraction <= 1.0):
        raise ValueError(f"poison_fraction must be in (0, 1], got {poison_fraction}")
    eligible = [
        g
        for g in dataset.train_graphs()
        if g.label == target_label and g.num_nodes >= min_nodes
    ]
    if not eligible:
        raise ValueError(
            f"no eligible train graphs with label {target_label} and "
            f"at least {min_nodes} nodes"
        )
    scored = sorted(
        ((confidence(model, g, target_label), g.id) for g in eligible)
    )
    take = math.ceil(poison_fraction * len(eligible))
    return [gid for _, gid in scored[:take]]


def candidate_nodes(graph: Graph, k: int) -> list[int]:
    """Top min(k, N) nodes by degree centrality, ties by ascending id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if graph.num_nodes < 2:
        raise ValueError("candidate selection needs at least 2 nodes")
    ranked = sorted(
        range(graph.num_nodes),
        key=lambda v: (-degree_centrality(graph, v), v),
    )
    return ranked[: min(k, graph.num_nodes)]


def importance_score(model, graph: Graph, v: int, target_class: int | None = None) -> float:
    """Logit movement caused by deleting node v.

    With ``target_class`` None this is the L1 norm of f(G - v) - f(G);
    otherwise only the target class logit difference is measured.
    """
    base = neuralnet.forward(model, graph)
    ablated = neuralnet.forward(model, remove_node(graph, v))
    if target_class is None:
        return float(np.abs(ablated - base).sum())
    if not (0 <= target_class < base.shape[0]):
        raise ValueError(f"target_class {target_class} outside class range")
    return float(abs(ablated[target_class] - base[target_class]))


def select_trigger_nodes(model, graph: Graph, config: SelectionConfig) -> list[int]:
    """The trigger_size most important candidate nodes, ascending id order.

    Candidates are the top (candidate_multiplier * trigger_size) nodes by
    degree centrality; among them the trigger_size highest importance scores
    win, ties by ascending node id.
    """
    config.validate()
    m = config.trigger_size
    if graph.num_nodes < m:
        raise ValueError(
            f"graph {graph.id} has {graph.num_nodes} nodes, fewer than "
            f"trigger_size {m}"
        )
    if graph.num_nodes == m:
        return list(range(m))
    cands = candidate_nodes(graph, config.candidate_multiplier * m)
    target = config.target_class if config.importance_mode == "target-logit" else None
    scored = sorted(
        ((-importance_score(model, graph, v, target), v) for v in cands)
    )
    chosen = [v for _, v in scored[:m]]
    return sorted(chosen)
