"""Graph container, synthetic generator, splits, stats, and persistence."""

from __future__ import annotations

import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpsba.graphcore import (
    DatasetFormatError,
    DatasetLoadError,
    Graph,
    dataset_from_json,
    dataset_to_json,
    degree_centrality,
    generate_synthetic,
    graph_stats,
    graphs_equal,
    keep_nodes,
    load_dataset,
    parse_tudataset,
    permute_graph,
    remove_node,
    save_dataset,
    split_dataset,
)
from oracles import brute_force_triangles, random_graph


def make_graph(num_nodes, edges, features=None, label=0, gid=0):
    if features is None:
        features = np.ones((num_nodes, 2))
    return Graph(id=gid, num_nodes=num_nodes, edges=frozenset(edges), features=np.asarray(features, dtype=np.float64), label=label)


class TestGraphContainer:
    def test_edges_normalized_to_sorted_pairs(self):
        g = make_graph(3, [(2, 0), (1, 2)])
        assert g.edges == frozenset({(0, 2), (1, 2)})
        assert g.num_edges == 2

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            make_graph(3, [(1, 1)])

    def test_edge_outside_range_rejected(self):
        with pytest.raises(ValueError):
            make_graph(3, [(0, 3)])

    def test_feature_row_count_must_match(self):
        with pytest.raises(ValueError):
            make_graph(3, [(0, 1)], features=np.ones((2, 2)))

    def test_adjacency_symmetric_zero_diagonal(self, rng):
        g = random_graph(rng, 8, 3)
        adj = g.adjacency()
        assert np.array_equal(adj, adj.T)
        assert not adj.diagonal().any()
        assert adj.sum() == 2 * g.num_edges

    def test_features_read_only(self):
        g = make_graph(2, [(0, 1)])
        with pytest.raises(ValueError):
            g.features[0, 0] = 5.0

    def test_graphs_equal_checks_id_by_default(self):
        a = make_graph(2, [(0, 1)], gid=1)
        b = make_graph(2, [(0, 1)], gid=2)
        assert not graphs_equal(a, b)
        assert graphs_equal(a, b, check_id=False)

    def test_degree(self):
        g = make_graph(4, [(0, 1), (0, 2), (0, 3)])
        assert g.degree(0) == 3
        assert g.degree(3) == 1


class TestDegreeCentrality:
    def test_star_center_is_one(self):
        g = make_graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
        assert degree_centrality(g, 0) == 1.0

    def test_isolated_node_zero(self):
        g = make_graph(3, [(0, 1)])
        assert degree_centrality(g, 2) == 0.0

    def test_path_endpoint(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        assert degree_centrality(g, 0) == 0.5

    def test_sum_identity(self, rng):
        # sum of centralities times (N-1) equals twice the edge count
        for _ in range(10):
            g = random_graph(rng, 9, 2)
            total = sum(degree_centrality(g, v) for v in range(g.num_nodes))
            assert total * (g.num_nodes - 1) == pytest.approx(2 * g.num_edges)


class TestNodeSurgery:
    def test_remove_from_triangle(self):
        g = make_graph(3, [(0, 1), (1, 2), (0, 2)])
        for v in range(3):
            reduced = remove_node(g, v)
            assert reduced.num_nodes == 2
            assert reduced.edges == frozenset({(0, 1)})

    def test_remove_isolated_node(self):
        g = make_graph(3, [(0, 1)], features=np.arange(6).reshape(3, 2))
        reduced = remove_node(g, 2)
        assert reduced.num_nodes == 2
        assert reduced.edges == g.edges
        assert np.array_equal(reduced.features, g.features[:2])

    def test_remove_middle_of_path(self):
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        reduced = remove_node(g, 2)
        # two disconnected 2-node paths; node 3/4 shift down to 2/3
        assert reduced.num_nodes == 4
        assert reduced.edges == frozenset({(0, 1), (2, 3)})

    def test_keep_nodes_induces_subgraph(self):
        feats = np.arange(10).reshape(5, 2)
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)], features=feats)
        sub = keep_nodes(g, [1, 3, 4])
        assert sub.num_nodes == 3
        assert sub.edges == frozenset({(1, 2)})
        assert np.array_equal(sub.features, feats[[1, 3, 4]])


class TestPermutation:
    def test_edges_and_features_follow_the_map(self):
        feats = np.arange(6, dtype=np.float64).reshape(3, 2)
        g = make_graph(3, [(0, 1)], features=feats)
        p = permute_graph(g, [2, 0, 1])  # node i lands at perm[i]
        assert p.edges == frozenset({(0, 2)})
        assert np.array_equal(p.features[2], feats[0])
        assert np.array_equal(p.features[0], feats[1])

    def test_stats_invariant_under_permutation(self, rng):
        g = random_graph(rng, 10, 3)
        perm = rng.permutation(10).tolist()
        a = graph_stats(g).vector
        b = graph_stats(permute_graph(g, perm)).vector
        assert np.allclose(a, b)


class TestGraphStats:
    def test_complete_four_node_graph(self):
        edges = list(itertools.combinations(range(4), 2))
        g = make_graph(4, edges, features=np.ones((4, 3)))
        v = graph_stats(g).vector
        expect = [4, 6, 3.0, 3, 4, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        assert np.allclose(v, expect)
        assert len(v) == 5 + 2 * g.feature_dim

    def test_single_node(self):
        g = make_graph(1, [], features=np.array([[0.7]]))
        v = graph_stats(g).vector
        assert np.allclose(v, [1, 0, 0, 0, 0, 0.7, 0.0])

    def test_triangles_match_brute_force(self, rng):
        for _ in range(30):
            g = random_graph(rng, 12, 2, edge_prob=0.35)
            assert graph_stats(g).triangles == brute_force_triangles(g)

    def test_twenty_node_triangle_count(self, rng):
        g = random_graph(rng, 20, 2, edge_prob=0.25)
        assert graph_stats(g).triangles == brute_force_triangles(g)


class TestSyntheticGenerator:
    def test_determinism(self):
        a = generate_synthetic(50, seed=7)
        b = generate_synthetic(50, seed=7)
        assert dataset_to_json(a) == dataset_to_json(b)

    def test_shape_and_planted_clique(self):
        ds = generate_synthetic(50, seed=7)
        assert len(ds.graphs) == 100
        assert ds.num_classes == 2
        assert ds.label_histogram() == {0: 50, 1: 50}
        for g in ds.graphs:
            assert 12 <= g.num_nodes <= 20
            nxg = nx.Graph()
            nxg.add_nodes_from(range(g.num_nodes))
            nxg.add_edges_from(g.edges)
            biggest = max(len(c) for c in nx.find_cliques(nxg))
            if g.label == 1:
                assert biggest >= 5
            else:
                assert biggest < 5

    def test_class_feature_means_separate(self):
        ds = generate_synthetic(50, seed=7)
        mean0 = np.mean([g.features.mean() for g in ds.graphs if g.label == 0])
        mean1 = np.mean([g.features.mean() for g in ds.graphs if g.label == 1])
        assert mean0 < 0.2 < 0.3 < mean1

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic(5, seed=0)


class TestSplit:
    def test_even_split_counts(self):
        ds = generate_synthetic(50, seed=7)
        split = split_dataset(ds, 0.5, seed=0)
        assert len(split.train_ids()) == 50
        assert len(split.test_ids()) == 50
        train_labels = [split.graph(i).label for i in split.train_ids()]
        assert abs(train_labels.count(0) - 25) <= 1
        assert abs(train_labels.count(1) - 25) <= 1

    def test_partition_covers_everything(self):
        ds = generate_synthetic(20, seed=1)
        split = split_dataset(ds, 0.3, seed=4)
        ids = sorted(split.train_ids()) + sorted(split.test_ids())
        assert sorted(ids) == sorted(g.id for g in ds.graphs)

    def test_determinism(self):
        ds = generate_synthetic(20, seed=1)
        a = split_dataset(ds, 0.5, seed=9)
        b = split_dataset(ds, 0.5, seed=9)
        assert a.train_ids() == b.train_ids()
        assert a.test_ids() == b.test_ids()

    @given(st.floats(min_value=0.05, max_value=0.95), st.integers(min_value=0, max_value=50))
    def test_every_class_present_on_both_sides(self, fraction, seed):
        ds = generate_synthetic(10, seed=2)
        split = split_dataset(ds, fraction, seed=seed)
        for side in (split.train_graphs(), split.test_graphs()):
            labels = {g.label for g in side}
            assert labels == {0, 1}


TU_FILES = {
    "fix_A.txt": "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
    "fix_graph_indicator.txt": "1\n1\n1\n2\n2\n",
    "fix_graph_labels.txt": "1\n2\n",
    "fix_node_labels.txt": "0\n1\n0\n1\n1\n",
}


def write_tu_fixture(directory, files=TU_FILES):
    directory.mkdir(parents=True, exist_ok=True)
    for fname, text in files.items():
        (directory / fname).write_text(text)
    return directory


class TestTudatasetParse:
    def test_hand_built_fixture(self, tmp_path):
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix"), "fix")
        assert len(ds.graphs) == 2
        assert ds.num_classes == 2
        triangle, pair = ds.graphs
        assert triangle.num_nodes == 3 and triangle.num_edges == 3
        assert pair.num_nodes == 2 and pair.num_edges == 1
        # raw labels {1, 2} remapped to contiguous {0, 1}
        assert [g.label for g in ds.graphs] == [0, 1]
        # tie on class frequency resolves to the lowest label
        assert ds.target_label == 0

    def test_one_hot_features_from_node_labels(self, tmp_path):
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix"), "fix")
        assert ds.feature_dim == 2
        assert np.array_equal(
            ds.graphs[0].features, np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        )

    def test_empty_attributes_file_falls_back_to_node_labels(self, tmp_path):
        files = dict(TU_FILES)
        files["fix_node_attributes.txt"] = "\n"
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")
        assert ds.feature_dim == 2

    def test_attributes_take_precedence(self, tmp_path):
        files = dict(TU_FILES)
        files["fix_node_attributes.txt"] = "0.1, 0.2\n0.3, 0.4\n0.5, 0.6\n0.7, 0.8\n0.9, 1.0\n"
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")
        assert np.allclose(ds.graphs[1].features, [[0.7, 0.8], [0.9, 1.0]])

    def test_constant_feature_when_nothing_supplied(self, tmp_path):
        files = {k: v for k, v in TU_FILES.items() if k != "fix_node_labels.txt"}
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")
        assert ds.feature_dim == 1
        assert np.array_equal(ds.graphs[0].features, np.ones((3, 1)))

    def test_missing_mandatory_file(self, tmp_path):
        files = {k: v for k, v in TU_FILES.items() if k != "fix_graph_labels.txt"}
        with pytest.raises(DatasetLoadError, match="missing mandatory file"):
            parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")

    def test_cross_graph_edge_rejected(self, tmp_path):
        files = dict(TU_FILES)
        files["fix_A.txt"] = "1, 4\n"
        with pytest.raises(DatasetFormatError, match="crosses graphs"):
            parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")

    def test_label_count_mismatch_rejected(self, tmp_path):
        files = dict(TU_FILES)
        files["fix_graph_labels.txt"] = "1\n"
        with pytest.raises(DatasetFormatError):
            parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix")

    def test_parser_does_not_mutate_input_directory(self, tmp_path):
        directory = write_tu_fixture(tmp_path / "fix")
        before = {p.name: p.read_bytes() for p in directory.iterdir()}
        parse_tudataset(directory, "fix")
        after = {p.name: p.read_bytes() for p in directory.iterdir()}
        assert before == after

    def test_standardize_centers_columns(self, tmp_path):
        files = dict(TU_FILES)
        files["fix_node_attributes.txt"] = "1.0\n2.0\n3.0\n4.0\n5.0\n"
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix", files), "fix", standardize=True)
        stacked = np.vstack([g.features for g in ds.graphs])
        assert abs(stacked.mean()) < 1e-12
        assert abs(stacked.std() - 1.0) < 1e-12


class TestPersistence:
    def test_round_trip_preserves_everything(self, tmp_path):
        ds = split_dataset(generate_synthetic(10, seed=5), 0.5, seed=5)
        path = tmp_path / "out" / "ds.json"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.num_classes == ds.num_classes
        assert loaded.feature_dim == ds.feature_dim
        assert loaded.target_label == ds.target_label
        assert loaded.train_ids() == ds.train_ids()
        for a, b in zip(ds.graphs, loaded.graphs):
            assert graphs_equal(a, b)

    def test_serialization_is_stable(self):
        ds = generate_synthetic(10, seed=5)
        assert dataset_to_json(ds) == dataset_to_json(dataset_from_json(dataset_to_json(ds)))

    def test_parse_serialize_parse_identity(self, tmp_path):
        ds = parse_tudataset(write_tu_fixture(tmp_path / "fix"), "fix")
        again = dataset_from_json(dataset_to_json(ds))
        for a, b in zip(ds.graphs, again.graphs):
            assert graphs_equal(a, b)
        assert dataset_to_json(ds) == dataset_to_json(again)

    def test_load_missing_file_raises(self, tmp_path):
        with pytest.raises(DatasetLoadError):
            load_dataset(tmp_path / "absent.json")
