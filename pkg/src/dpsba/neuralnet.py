"""Graph classifiers and their training loops.

Three small message-passing architectures over dense adjacency tensors:

* ``gcn-mean``: symmetric-normalized neighbor averaging with self loops,
  D^(-1/2) (A + I) D^(-1/2), linear + ReLU per layer, node-mean readout.
* ``gin-sum``: per layer (1 + eps) * h_v + sum of neighbor states, fed to a
  two-layer perceptron; node-sum readout.
* ``attn-pool``: gcn-mean layers followed by a learned per-node scalar
  attention score; readout is the attention-weighted mean.

Everything runs in float64 on CPU so results are deterministic and match
finite-difference gradient checks tightly. Forward passes take a dense
(N, N) adjacency and an (N, F) feature matrix, which keeps the whole path
differentiable with respect to injected trigger entries.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .graphcore import Graph, GraphDataset, atomic_write_text

ARCHITECTURES = ("gcn-mean", "gin-sum", "attn-pool")

ADAM_BETAS = (0.9, 0.999)


class TrainingError(RuntimeError):
    """Training diverged or was configured impossibly."""


@dataclass
class TrainConfig:
    """Knobs for ``train_classifier``. Defaults follow the study protocol."""

    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int | None = 32
    weight_decay: float = 0.0
    seed: int = 0
    early_stop_patience: int | None = None
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or None, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1 or None")


def normalized_adjacency(adj: torch.Tensor) -> torch.Tensor:
    """D^(-1/2) (A + I) D^(-1/2) with degrees taken after adding self loops."""
    n = adj.shape[0]
    a = adj + torch.eye(n, dtype=adj.dtype)
    d = a.sum(dim=1)
    dinv = d.pow(-0.5)
    return dinv.unsqueeze(1) * a * dinv.unsqueeze(0)


class GcnMeanClassifier(nn.Module):
    architecture = "gcn-mean"

    def __init__(self, feature_dim: int, num_classes: int, hidden_dim: int = 32, num_layers: int = 2):
        super().__init__()
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        dims = [feature_dim] + [hidden_dim] * num_layers
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(num_layers)
        )
        self.head = nn.Linear(hidden_dim, num_classes)

    def forward(self, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        s = normalized_adjacency(adj)
        h = x
        for lin in self.layers:
            h = torch.relu(lin(s @ h))
        return self.head(h.mean(dim=0))


class GinSumClassifier(nn.Module):
    architecture = "gin-sum"

    def __init__(self, feature_dim: int, num_classes: int, hidden_dim: int = 32, num_layers: int = 2, eps: float = 0.0):
        super().__init__()
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.eps = eps
        dims = [feature_dim] + [hidden_dim] * num_layers
        self.mlps = nn.ModuleList(
            nn.Sequential(
                nn.Linear(dims[i], hidden_dim),
                nn.ReLU(),
                nn.Linear(hidden_dim, dims[i + 1]),
            )
            for i in range(num_layers)
        )
        self.head = nn.Linear(hidden_dim, num_classes)

    def forward(self, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        h = x
        for mlp in self.mlps:
            h = mlp((1.0 + self.eps) * h + adj @ h)
        return self.head(h.sum(dim=0))


class AttnPoolClassifier(nn.Module):
    architecture = "attn-pool"

    def __init__(self, feature_dim: int, num_classes: int, hidden_dim: int = 32, num_layers: int = 2):
        super().__init__()
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        dims = [feature_dim] + [hidden_dim] * num_layers
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(num_layers)
        )
        self.score = nn.Linear(hidden_dim, 1)
        self.head = nn.Linear(hidden_dim, num_classes)

    def forward(self, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        s = normalized_adjacency(adj)
        h = x
        for lin in self.layers:
            h = torch.relu(lin(s @ h))
        attn = torch.softmax(self.score(h).squeeze(-1), dim=0)
        return self.head((attn.unsqueeze(1) * h).sum(dim=0))


_ARCH_CLASSES = {
    "gcn-mean": GcnMeanClassifier,
    "gin-sum": GinSumClassifier,
    "attn-pool": AttnPoolClassifier,
}


def _seeded_init(module: nn.Module, seed: int) -> None:
    # Uniform(-1/sqrt(fan_in), +) weights, zero biases, drawn from a local
    # generator so global RNG state never leaks into model parameters.
    gen = torch.Generator()
    gen.manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if p.dim() >= 2:
                bound = 1.0 / np.sqrt(p.shape[1])
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()


def build_model(
    architecture: str,
    feature_dim: int,
    num_classes: int,
    hidden_dim: int = 32,
    num_layers: int = 2,
    seed: int = 0,
) -> nn.Module:
    """Construct a float64 classifier with deterministic seeded init."""
    if architecture not in _ARCH_CLASSES:
        raise ValueError(
            f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}"
        )
    if feature_dim < 1 or num_classes < 2:
        raise ValueError("need feature_dim >= 1 and num_classes >= 2")
    if hidden_dim < 1 or num_layers < 1:
        raise ValueError("need hidden_dim >= 1 and num_layers >= 1")
    model = _ARCH_CLASSES[architecture](feature_dim, num_classes, hidden_dim, num_layers)
    model.double()
    _seeded_init(model, seed)
    model.meta = {
        "architecture": architecture,
        "feature_dim": feature_dim,
        "num_classes": num_classes,
        "hidden_dim": hidden_dim,
        "num_layers": num_layers,
        "init_seed": seed,
    }
    return model


def graph_tensors(graph: Graph) -> tuple[torch.Tensor, torch.Tensor]:
    """Dense float64 (adjacency, features) pair, cached on the graph."""
    cached = getattr(graph, "_tensors", None)
    if cached is None:
        adj = torch.from_numpy(np.array(graph.adjacency(), dtype=np.float64))
        x = torch.from_numpy(np.array(graph.features, dtype=np.float64))
        cached = (adj, x)
        object.__setattr__(graph, "_tensors", cached)
    return cached


def _check_width(model: nn.Module, graph: Graph) -> None:
    want = getattr(model, "feature_dim", None)
    if want is not None and graph.features.shape[1] != want:
        raise ValueError(
            f"graph {graph.id}: feature width {graph.features.shape[1]} does not "
            f"match model input width {want}"
        )


def forward(model: nn.Module, graph: Graph) -> np.ndarray:
    """Logit vector for one graph as a float64 numpy array."""
    _check_width(model, graph)
    adj, x = graph_tensors(graph)
    with torch.no_grad():
        logits = model(adj, x)
    return logits.detach().numpy().copy()


def predict(model: nn.Module, graph: Graph) -> int:
    """Argmax class; ties resolve to the lowest class index."""
    return int(np.argmax(forward(model, graph)))


def accuracy(model: nn.Module, graphs: list[Graph]) -> float:
    if not graphs:
        raise ValueError("accuracy over an empty graph list is undefined")
    hits = sum(1 for g in graphs if predict(model, g) == g.label)
    return hits / len(graphs)


def _make_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adam":
        return torch.optim.Adam(
            model.parameters(),
            lr=config.learning_rate,
            betas=ADAM_BETAS,
            weight_decay=config.weight_decay,
        )
    return torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )


def _epoch_batches(
    n: int, batch_size: int | None, rng: np.random.Generator
) -> list[np.ndarray]:
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _run_training(
    model: nn.Module,
    graphs: list[Graph],
    config: TrainConfig,
) -> float:
    """Gradient training of ``model`` in place; returns final epoch loss."""
    tensors = [graph_tensors(g) for g in graphs]
    labels = [torch.tensor(g.label, dtype=torch.long) for g in graphs]
    opt = _make_optimizer(model, config)
    rng = np.random.default_rng(config.seed)
    best = np.inf
    stale = 0
    epoch_loss = np.nan
    for epoch in range(config.epochs):
        total = 0.0
        for batch in _epoch_batches(len(graphs), config.batch_size, rng):
            opt.zero_grad()
            loss = sum(
                torch.nn.functional.cross_entropy(
                    model(*tensors[i]).unsqueeze(0), labels[i].unsqueeze(0)
                )
                for i in batch
            ) / len(batch)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(batch)
        epoch_loss = total / len(graphs)
        if config.early_stop_patience is not None:
            if epoch_loss < best - 1e-12:
                best = epoch_loss
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    return epoch_loss


def train_classifier(
    dataset: GraphDataset,
    architecture: str,
    config: TrainConfig,
    hidden_dim: int = 32,
    num_layers: int = 2,
) -> nn.Module:
    """Train a fresh classifier on the dataset's train split.

    Deterministic: identical dataset, architecture and config yield identical
    parameters. Metadata records the final train loss and, when a test split
    exists, the clean test accuracy.
    """
    config.validate()
    graphs = dataset.train_graphs()
    if not graphs:
        raise ValueError("dataset has an empty train split")
    model = build_model(
        architecture,
        dataset.feature_dim,
        dataset.num_classes,
        hidden_dim=hidden_dim,
        num_layers=num_layers,
        seed=config.seed,
    )
    final_loss = _run_training(model, graphs, config)
    model.meta["final_train_loss"] = final_loss
    test = dataset.test_graphs()
    model.meta["clean_test_accuracy"] = accuracy(model, test) if test else None
    model.meta["train_seed"] = config.seed
    return model


def fine_tune(
    model: nn.Module,
    dataset: GraphDataset,
    epochs: int,
    learning_rate: float = 1e-3,
    batch_size: int | None = 32,
    seed: int = 0,
    weight_decay: float = 0.0,
) -> nn.Module:
    """Continue training from current parameters on a private copy."""
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    tuned = copy.deepcopy(model)
    if epochs == 0:
        return tuned
    cfg = TrainConfig(
        learning_rate=learning_rate,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        weight_decay=weight_decay,
    )
    cfg.validate()
    graphs = dataset.train_graphs()
    if not graphs:
        raise ValueError("dataset has an empty train split")
    final_loss = _run_training(tuned, graphs, cfg)
    tuned.meta = dict(getattr(model, "meta", {}))
    tuned.meta["final_train_loss"] = final_loss
    return tuned


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MODEL_FORMAT = "classifier/v1"


def model_to_json(model: nn.Module) -> str:
    meta = dict(getattr(model, "meta", {}))
    params = {
        name: {"shape": list(p.shape), "values": p.detach().reshape(-1).tolist()}
        for name, p in model.named_parameters()
    }
    doc = {
        "format": MODEL_FORMAT,
        "architecture": model.architecture,
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "hidden_dim": model.hidden_dim,
        "num_layers": model.num_layers,
        "meta": meta,
        "params": params,
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> nn.Module:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unknown model format tag {doc.get('format')!r}")
    model = build_model(
        doc["architecture"],
        doc["feature_dim"],
        doc["num_classes"],
        hidden_dim=doc["hidden_dim"],
        num_layers=doc["num_layers"],
        seed=0,
    )
    with torch.no_grad():
        named = dict(model.named_parameters())
        if set(named) != set(doc["params"]):
            raise ValueError("checkpoint parameter names do not match architecture")
        for name, spec in doc["params"].items():
            values = torch.tensor(spec["values"], dtype=torch.float64)
            named[name].copy_(values.reshape(spec["shape"]))
    model.meta = dict(doc.get("meta", {}))
    return model


def save_model(model: nn.Module, path: str | Path) -> None:
    atomic_write_text(path, model_to_json(model))


def load_model(path: str | Path) -> nn.Module:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing model checkpoint: {path}")
    return model_from_json(path.read_text())
