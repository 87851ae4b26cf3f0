"""Graph and dataset primitives.

Everything downstream (classifiers, trigger generation, detectors) works on
the two value types defined here: an undirected attributed ``Graph`` and a
``GraphDataset`` holding graphs, label metadata and a train/test split.
Graphs are treated as immutable values; every transformation returns a new
object and leaves its input untouched.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

Edge = tuple[int, int]

TRAIN = "train"
TEST = "test"


class DatasetLoadError(RuntimeError):
    """A mandatory dataset file is missing or unreadable."""


class DatasetFormatError(ValueError):
    """A dataset file exists but violates the expected format."""


def _norm_edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph with a class label.

    ``edges`` holds unordered 0-indexed pairs stored as (min, max) tuples,
    with no self loops. ``features`` has one row per node; the column count
    is constant across a dataset.
    """

    id: int
    num_nodes: int
    edges: frozenset[Edge]
    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValueError(f"graph {self.id}: num_nodes must be >= 1")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"graph {self.id}: features must be ({self.num_nodes}, F), "
                f"got {feats.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"graph {self.id}: features must be finite")
        feats = feats.copy()
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"graph {self.id}: self loop at node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(
                    f"graph {self.id}: edge ({u}, {v}) out of range for "
                    f"{self.num_nodes} nodes"
                )
            norm.add(_norm_edge(u, v))
        object.__setattr__(self, "edges", frozenset(norm))
        object.__setattr__(self, "_adjacency", None)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency with a zero diagonal."""
        cached = getattr(self, "_adjacency", None)
        if cached is None:
            a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
            for u, v in self.edges:
                a[u, v] = 1.0
                a[v, u] = 1.0
            a.flags.writeable = False
            object.__setattr__(self, "_adjacency", a)
            cached = a
        return cached

    def degree(self, v: int) -> int:
        self._check_node(v)
        return sum(1 for u, w in self.edges if u == v or w == v)

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.num_nodes, dtype=np.int64)
        for u, v in self.edges:
            d[u] += 1
            d[v] += 1
        return d

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges)

    def _check_node(self, v: int) -> None:
        if not (0 <= v < self.num_nodes):
            raise ValueError(
                f"graph {self.id}: node {v} out of range (N={self.num_nodes})"
            )


def graphs_equal(a: Graph, b: Graph, check_id: bool = True) -> bool:
    """Exact structural equality: nodes, edge set, features, label."""
    if check_id and a.id != b.id:
        return False
    return (
        a.num_nodes == b.num_nodes
        and a.label == b.label
        and a.edges == b.edges
        and a.features.shape == b.features.shape
        and np.array_equal(a.features, b.features)
    )


@dataclass(eq=False)
class GraphDataset:
    """A list of graphs plus label metadata and a named split.

    ``split`` maps "train"/"test" to graph id lists. A freshly parsed or
    generated dataset carries an empty split; ``split_dataset`` fills it.
    ``target_label`` is the class an attack tries to force downstream.
    """

    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    split: dict[str, list[int]]
    target_label: int
    name: str = "dataset"

    def __post_init__(self):
        self._index = {g.id: g for g in self.graphs}
        if len(self._index) != len(self.graphs):
            raise ValueError("duplicate graph ids in dataset")

    def graph(self, graph_id: int) -> Graph:
        try:
            return self._index[graph_id]
        except KeyError:
            raise KeyError(f"no graph with id {graph_id}") from None

    def train_ids(self) -> list[int]:
        return list(self.split.get(TRAIN, []))

    def test_ids(self) -> list[int]:
        return list(self.split.get(TEST, []))

    def train_graphs(self) -> list[Graph]:
        return [self.graph(i) for i in self.train_ids()]

    def test_graphs(self) -> list[Graph]:
        return [self.graph(i) for i in self.test_ids()]

    def replace_graphs(self, replacements: dict[int, Graph]) -> "GraphDataset":
        """New dataset with some graphs swapped by id; split/metadata kept."""
        for gid, g in replacements.items():
            if gid not in self._index:
                raise KeyError(f"no graph with id {gid}")
            if g.id != gid:
                raise ValueError(f"replacement for id {gid} carries id {g.id}")
        new_graphs = [replacements.get(g.id, g) for g in self.graphs]
        return GraphDataset(
            graphs=new_graphs,
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            split={k: list(v) for k, v in self.split.items()},
            target_label=self.target_label,
            name=self.name,
        )

    def label_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for g in self.graphs:
            hist[g.label] = hist.get(g.label, 0) + 1
        return hist


def validate_dataset(ds: GraphDataset) -> None:
    """Raise if dataset-level invariants are broken."""
    for g in ds.graphs:
        if not (0 <= g.label < ds.num_classes):
            raise ValueError(f"graph {g.id}: label {g.label} outside 0..{ds.num_classes - 1}")
        if g.feature_dim != ds.feature_dim:
            raise ValueError(
                f"graph {g.id}: feature width {g.feature_dim} != dataset {ds.feature_dim}"
            )
    if ds.split:
        seen: set[int] = set()
        for part, ids in ds.split.items():
            for gid in ids:
                ds.graph(gid)
                if gid in seen:
                    raise ValueError(f"graph id {gid} appears in more than one split part")
                seen.add(gid)
        if seen and seen != set(ds._index):
            missing = sorted(set(ds._index) - seen)
            raise ValueError(f"split does not cover graph ids {missing[:5]}")
    if not (0 <= ds.target_label < ds.num_classes):
        raise ValueError(f"target_label {ds.target_label} outside 0..{ds.num_classes - 1}")


# ---------------------------------------------------------------------------
# TUDataset parsing
# ---------------------------------------------------------------------------


def _read_lines(path: Path) -> list[str]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetLoadError(f"cannot read {path}: {exc}") from exc
    return text.splitlines()


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DatasetLoadError(f"missing mandatory file: {path}")
    return path


def _parse_int(token: str, path: Path, lineno: int) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise DatasetFormatError(
            f"{path}:{lineno}: expected integer, got {token.strip()!r}"
        ) from None


def _parse_float(token: str, path: Path, lineno: int) -> float:
    try:
        return float(token.strip())
    except ValueError:
        raise DatasetFormatError(
            f"{path}:{lineno}: expected number, got {token.strip()!r}"
        ) from None


def parse_tudataset(directory: str | Path, name: str, standardize: bool = False) -> GraphDataset:
    """Parse the standard benchmark text layout into a GraphDataset.

    Expects ``<name>_A.txt`` (1-indexed directed duplicate edge list),
    ``<name>_graph_indicator.txt`` and ``<name>_graph_labels.txt``; uses
    ``<name>_node_attributes.txt`` for features when present and non-empty,
    falling back to one-hot ``<name>_node_labels.txt`` and finally to a
    constant 1.0 feature. Labels are remapped to contiguous 0-based ints;
    ``target_label`` is set to the least frequent class (ties: lowest).
    """
    directory = Path(directory)
    a_path = _require(directory / f"{name}_A.txt")
    ind_path = _require(directory / f"{name}_graph_indicator.txt")
    lab_path = _require(directory / f"{name}_graph_labels.txt")

    indicator: list[int] = []
    for lineno, line in enumerate(_read_lines(ind_path), start=1):
        if not line.strip():
            continue
        indicator.append(_parse_int(line, ind_path, lineno))
    if not indicator:
        raise DatasetFormatError(f"{ind_path}: no node rows")
    num_graphs = max(indicator)
    if min(indicator) < 1:
        raise DatasetFormatError(f"{ind_path}: graph indices must be >= 1")

    # Node numbering is global and 1-based; build per-graph local indices in
    # order of appearance.
    node_graph: list[int] = indicator
    local_index: list[int] = []
    counts = [0] * (num_graphs + 1)
    for gid in node_graph:
        local_index.append(counts[gid])
        counts[gid] += 1
    sizes = counts[1:]
    if any(c == 0 for c in sizes):
        empty = sizes.index(0) + 1
        raise DatasetFormatError(f"{ind_path}: graph {empty} has no nodes")

    raw_labels: list[int] = []
    for lineno, line in enumerate(_read_lines(lab_path), start=1):
        if not line.strip():
            continue
        raw_labels.append(_parse_int(line, lab_path, lineno))
    if len(raw_labels) != num_graphs:
        raise DatasetFormatError(
            f"{lab_path}: {len(raw_labels)} labels for {num_graphs} graphs"
        )
    classes = sorted(set(raw_labels))
    remap = {c: i for i, c in enumerate(classes)}
    labels = [remap[c] for c in raw_labels]

    edge_sets: list[set[Edge]] = [set() for _ in range(num_graphs)]
    n_total = len(node_graph)
    for lineno, line in enumerate(_read_lines(a_path), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetFormatError(f"{a_path}:{lineno}: expected 'i, j' pair")
        i = _parse_int(parts[0], a_path, lineno)
        j = _parse_int(parts[1], a_path, lineno)
        if not (1 <= i <= n_total and 1 <= j <= n_total):
            raise DatasetFormatError(
                f"{a_path}:{lineno}: node index outside 1..{n_total}"
            )
        gi, gj = node_graph[i - 1], node_graph[j - 1]
        if gi != gj:
            raise DatasetFormatError(
                f"{a_path}:{lineno}: edge ({i}, {j}) crosses graphs {gi} and {gj}"
            )
        if i == j:
            raise DatasetFormatError(f"{a_path}:{lineno}: self loop at node {i}")
        u, v = local_index[i - 1], local_index[j - 1]
        edge_sets[gi - 1].add(_norm_edge(u, v))

    features = _load_node_features(directory, name, n_total)
    if standardize:
        mu = features.mean(axis=0)
        sd = features.std(axis=0)
        sd[sd < 1e-12] = 1.0
        features = (features - mu) / sd

    feature_dim = features.shape[1]
    node_rows: list[list[int]] = [[] for _ in range(num_graphs)]
    for node, gid in enumerate(node_graph):
        node_rows[gid - 1].append(node)

    graphs = []
    for gid in range(num_graphs):
        rows = features[node_rows[gid], :]
        graphs.append(
            Graph(
                id=gid,
                num_nodes=sizes[gid],
                edges=frozenset(edge_sets[gid]),
                features=rows,
                label=labels[gid],
            )
        )

    hist: dict[int, int] = {}
    for lab in labels:
        hist[lab] = hist.get(lab, 0) + 1
    target = min(hist, key=lambda c: (hist[c], c))

    ds = GraphDataset(
        graphs=graphs,
        num_classes=len(classes),
        feature_dim=feature_dim,
        split={},
        target_label=target,
        name=name,
    )
    validate_dataset(ds)
    return ds


def _load_node_features(directory: Path, name: str, n_total: int) -> np.ndarray:
    attr_path = directory / f"{name}_node_attributes.txt"
    if attr_path.is_file():
        lines = [l for l in _read_lines(attr_path) if l.strip()]
        if lines:
            rows = []
            width = None
            for lineno, line in enumerate(_read_lines(attr_path), start=1):
                if not line.strip():
                    continue
                vals = [_parse_float(t, attr_path, lineno) for t in line.split(",")]
                if width is None:
                    width = len(vals)
                elif len(vals) != width:
                    raise DatasetFormatError(
                        f"{attr_path}:{lineno}: expected {width} columns, got {len(vals)}"
                    )
                rows.append(vals)
            if len(rows) != n_total:
                raise DatasetFormatError(
                    f"{attr_path}: {len(rows)} attribute rows for {n_total} nodes"
                )
            return np.asarray(rows, dtype=np.float64)

    nl_path = directory / f"{name}_node_labels.txt"
    if nl_path.is_file():
        vals = []
        for lineno, line in enumerate(_read_lines(nl_path), start=1):
            if not line.strip():
                continue
            vals.append(_parse_int(line, nl_path, lineno))
        if vals:
            if len(vals) != n_total:
                raise DatasetFormatError(
                    f"{nl_path}: {len(vals)} node labels for {n_total} nodes"
                )
            distinct = sorted(set(vals))
            col = {v: i for i, v in enumerate(distinct)}
            feats = np.zeros((n_total, len(distinct)), dtype=np.float64)
            for node, v in enumerate(vals):
                feats[node, col[v]] = 1.0
            return feats

    return np.ones((n_total, 1), dtype=np.float64)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

SYNTH_MIN_NODES = 12
SYNTH_MAX_NODES = 20
SYNTH_EDGE_PROB = 0.15
SYNTH_CLIQUE_SIZE = 5
SYNTH_FEATURE_DIM = 4
SYNTH_FEATURE_STD = 0.3


def generate_synthetic(n_per_class: int, seed: int) -> GraphDataset:
    """Two-class synthetic benchmark, deterministic in ``seed``.

    Class 0: sparse random graphs (12..20 nodes, edge probability 0.15) with
    4-dim Gaussian features around 0. Class 1: same plus a planted dense
    clique on 5 nodes, features around 0.5. target_label defaults to 1, the
    class whose planted structure a learned trigger can plausibly imitate.
    """
    if n_per_class < 10:
        raise ValueError(f"n_per_class must be >= 10, got {n_per_class}")
    rng = np.random.default_rng(seed)
    graphs: list[Graph] = []
    gid = 0
    for label in (0, 1):
        mean = 0.0 if label == 0 else 0.5
        for _ in range(n_per_class):
            n = int(rng.integers(SYNTH_MIN_NODES, SYNTH_MAX_NODES + 1))
            edges: set[Edge] = set()
            for u in range(n):
                for v in range(u + 1, n):
                    if rng.random() < SYNTH_EDGE_PROB:
                        edges.add((u, v))
            if label == 1:
                members = sorted(rng.choice(n, size=SYNTH_CLIQUE_SIZE, replace=False).tolist())
                for i in range(SYNTH_CLIQUE_SIZE):
                    for j in range(i + 1, SYNTH_CLIQUE_SIZE):
                        edges.add(_norm_edge(members[i], members[j]))
            feats = rng.normal(mean, SYNTH_FEATURE_STD, size=(n, SYNTH_FEATURE_DIM))
            graphs.append(
                Graph(id=gid, num_nodes=n, edges=frozenset(edges), features=feats, label=label)
            )
            gid += 1
    ds = GraphDataset(
        graphs=graphs,
        num_classes=2,
        feature_dim=SYNTH_FEATURE_DIM,
        split={},
        target_label=1,
        name=f"synthetic-{n_per_class}x2-seed{seed}",
    )
    validate_dataset(ds)
    return ds


def split_dataset(dataset: GraphDataset, train_fraction: float, seed: int) -> GraphDataset:
    """Stratified shuffle split; returns a new dataset, graphs untouched."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    by_class: dict[int, list[int]] = {}
    for g in dataset.graphs:
        by_class.setdefault(g.label, []).append(g.id)
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) < 2:
            raise ValueError(
                f"class {label} has {len(ids)} graph(s); need >= 2 to stratify"
            )
        perm = rng.permutation(len(ids))
        n_train = int(round(train_fraction * len(ids)))
        n_train = min(max(n_train, 1), len(ids) - 1)
        shuffled = [ids[i] for i in perm]
        train.extend(shuffled[:n_train])
        test.extend(shuffled[n_train:])
    out = GraphDataset(
        graphs=list(dataset.graphs),
        num_classes=dataset.num_classes,
        feature_dim=dataset.feature_dim,
        split={TRAIN: sorted(train), TEST: sorted(test)},
        target_label=dataset.target_label,
        name=dataset.name,
    )
    validate_dataset(out)
    return out


# ---------------------------------------------------------------------------
# Local graph operations
# ---------------------------------------------------------------------------


def degree_centrality(graph: Graph, v: int) -> float:
    """deg(v) / (N - 1); undefined for single-node graphs."""
    graph._check_node(v)
    if graph.num_nodes < 2:
        raise ValueError("degree centrality undefined for a single-node graph")
    return graph.degree(v) / (graph.num_nodes - 1)


def remove_node(graph: Graph, v: int) -> Graph:
    """New graph without node v; remaining indices are compacted."""
    graph._check_node(v)
    if graph.num_nodes == 1:
        raise ValueError("cannot remove the only node of a graph")
    remap = {}
    k = 0
    for u in range(graph.num_nodes):
        if u == v:
            continue
        remap[u] = k
        k += 1
    edges = {
        _norm_edge(remap[a], remap[b])
        for a, b in graph.edges
        if a != v and b != v
    }
    feats = np.delete(graph.features, v, axis=0)
    return Graph(
        id=graph.id,
        num_nodes=graph.num_nodes - 1,
        edges=frozenset(edges),
        features=feats,
        label=graph.label,
    )


def keep_nodes(graph: Graph, keep: list[int]) -> Graph:
    """Induced subgraph on ``keep`` (order preserved after sorting)."""
    keep_sorted = sorted(set(keep))
    if not keep_sorted:
        raise ValueError("keep_nodes requires at least one node")
    for v in keep_sorted:
        graph._check_node(v)
    remap = {v: i for i, v in enumerate(keep_sorted)}
    kept = set(keep_sorted)
    edges = {
        _norm_edge(remap[a], remap[b])
        for a, b in graph.edges
        if a in kept and b in kept
    }
    feats = graph.features[keep_sorted, :]
    return Graph(
        id=graph.id,
        num_nodes=len(keep_sorted),
        edges=frozenset(edges),
        features=feats,
        label=graph.label,
    )


def permute_graph(graph: Graph, perm: list[int]) -> Graph:
    """Relabel nodes by ``perm`` (node i becomes perm[i])."""
    if sorted(perm) != list(range(graph.num_nodes)):
        raise ValueError("perm must be a permutation of node indices")
    edges = {_norm_edge(perm[u], perm[v]) for u, v in graph.edges}
    feats = np.empty_like(graph.features)
    for i, p in enumerate(perm):
        feats[p] = graph.features[i]
    return Graph(
        id=graph.id,
        num_nodes=graph.num_nodes,
        edges=frozenset(edges),
        features=feats,
        label=graph.label,
    )


@dataclass
class GraphStats:
    """Summary vector used by the statistical anomaly detector."""

    num_nodes: int
    num_edges: int
    mean_degree: float
    max_degree: int
    triangles: int
    feature_means: np.ndarray
    feature_vars: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.array(
                    [
                        float(self.num_nodes),
                        float(self.num_edges),
                        self.mean_degree,
                        float(self.max_degree),
                        float(self.triangles),
                    ]
                ),
                self.feature_means,
                self.feature_vars,
            ]
        )


def graph_stats(graph: Graph) -> GraphStats:
    """Exact structural and feature summary of a graph."""
    degs = graph.degrees()
    a = graph.adjacency().astype(np.int64)
    tri = int(np.trace(a @ a @ a)) // 6
    return GraphStats(
        num_nodes=graph.num_nodes,
        num_edges=graph.num_edges,
        mean_degree=2.0 * graph.num_edges / graph.num_nodes,
        max_degree=int(degs.max()) if graph.num_nodes else 0,
        triangles=tri,
        feature_means=graph.features.mean(axis=0),
        feature_vars=graph.features.var(axis=0),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

DATASET_FORMAT = "graphset/v1"


def dataset_to_json(ds: GraphDataset) -> str:
    doc = {
        "format": DATASET_FORMAT,
        "name": ds.name,
        "num_classes": ds.num_classes,
        "feature_dim": ds.feature_dim,
        "target_label": ds.target_label,
        "split": {k: list(v) for k, v in sorted(ds.split.items())},
        "graphs": [
            {
                "id": g.id,
                "label": g.label,
                "num_nodes": g.num_nodes,
                "edges": [list(e) for e in g.sorted_edges()],
                "features": g.features.tolist(),
            }
            for g in ds.graphs
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def dataset_from_json(text: str) -> GraphDataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid dataset document: {exc}") from exc
    if doc.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(
            f"unknown dataset format tag {doc.get('format')!r}"
        )
    graphs = [
        Graph(
            id=g["id"],
            num_nodes=g["num_nodes"],
            edges=frozenset(tuple(e) for e in g["edges"]),
            features=np.asarray(g["features"], dtype=np.float64),
            label=g["label"],
        )
        for g in doc["graphs"]
    ]
    ds = GraphDataset(
        graphs=graphs,
        num_classes=doc["num_classes"],
        feature_dim=doc["feature_dim"],
        split={k: list(v) for k, v in doc.get("split", {}).items()},
        target_label=doc["target_label"],
        name=doc.get("name", "dataset"),
    )
    validate_dataset(ds)
    return ds


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: GraphDataset, path: str | Path) -> None:
    atomic_write_text(path, dataset_to_json(ds))


def load_dataset(path: str | Path) -> GraphDataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetLoadError(f"missing dataset file: {path}")
    return dataset_from_json(path.read_text())
