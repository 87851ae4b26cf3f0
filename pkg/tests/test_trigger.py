"""Generators, binarization, injection, ledger audit, persistence."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
import torch

from dpsba import neuralnet, selection, trigger
from dpsba.graphcore import Graph, graphs_equal
from oracles import central_difference_grads, max_relative_error, random_graph


def host_graph(rng=None, num_nodes=16, feature_dim=3, gid=0, label=1):
    rng = rng or np.random.default_rng(42)
    return random_graph(rng, num_nodes, feature_dim, edge_prob=0.3, gid=gid, label=label)


class TestInitGenerators:
    def test_shapes_and_ranges(self):
        gens = trigger.init_generators(4, 3, seed=0)
        assert gens.w_topology.shape == (4, 4)
        assert gens.b_topology.shape == (4,)
        assert gens.w_feature.shape == (3, 3)
        assert gens.b_feature.shape == (3,)
        for w in (gens.w_topology, gens.w_feature):
            assert w.abs().max() <= 0.1
        assert not gens.b_topology.any()
        assert not gens.b_feature.any()

    def test_determinism(self):
        a = trigger.init_generators(4, 3, seed=9)
        b = trigger.init_generators(4, 3, seed=9)
        assert torch.equal(a.w_topology, b.w_topology)
        assert torch.equal(a.w_feature, b.w_feature)

    def test_parameters_require_grad(self):
        gens = trigger.init_generators(3, 2, seed=0)
        for p in (*gens.topology_parameters(), *gens.feature_parameters()):
            assert p.requires_grad

    def test_trigger_too_small_rejected(self):
        with pytest.raises(ValueError):
            trigger.init_generators(1, 3, seed=0)

    def test_initial_topology_near_half(self, rng):
        # small weights and zero bias keep every off-diagonal entry within
        # 0.1 of one half on 0/1-scale region inputs
        gens = trigger.init_generators(4, 3, seed=3)
        region = torch.tensor(
            np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]]),
            dtype=torch.float64,
        )
        soft = trigger.soft_topology(gens, region).detach().numpy()
        off = ~np.eye(4, dtype=bool)
        assert np.all(np.abs(soft[off] - 0.5) < 0.1)


class TestBinarize:
    def test_strict_threshold(self):
        values = torch.tensor([0.6, 0.5, 0.49], dtype=torch.float64)
        assert trigger.binarize(values).tolist() == [1.0, 0.0, 0.0]

    def test_all_half_matrix_becomes_empty(self):
        half = torch.full((4, 4), 0.5, dtype=torch.float64)
        assert not trigger.binarize(half).any()

    def test_zero_init_generators_yield_empty_trigger(self):
        gens = trigger.init_generators(4, 3, seed=0)
        with torch.no_grad():
            gens.w_topology.zero_()
        region = torch.zeros((4, 4), dtype=torch.float64)
        soft = trigger.soft_topology(gens, region)
        assert not trigger.binarize(soft).any()

    def test_straight_through_equals_identity_path_gradient(self):
        # linear consumption of the binarized 3x3 block: the gradient must
        # be exactly what the identity (no-binarize) path produces
        coeffs = torch.tensor(
            [[0.3, -1.2, 0.7], [0.5, 2.0, -0.4], [1.1, 0.0, -2.2]], dtype=torch.float64
        )
        z = torch.tensor(
            [[0.2, -0.5, 1.4], [0.9, -1.3, 0.1], [-0.2, 0.6, -0.8]],
            dtype=torch.float64,
            requires_grad=True,
        )
        soft = torch.sigmoid(z)
        (coeffs * trigger.binarize(soft)).sum().backward()
        ste_grad = z.grad.clone()

        z2 = z.detach().clone().requires_grad_(True)
        (coeffs * torch.sigmoid(z2)).sum().backward()
        assert torch.allclose(ste_grad, z2.grad, atol=0, rtol=0)


class TestSoftTopology:
    def test_zero_generator_closed_form(self):
        gens = trigger.init_generators(3, 2, seed=0)
        with torch.no_grad():
            gens.w_topology.zero_()
        soft = trigger.soft_topology(gens, torch.zeros((3, 3), dtype=torch.float64))
        expect = np.full((3, 3), 0.5)
        np.fill_diagonal(expect, 0.0)
        assert np.allclose(soft.detach().numpy(), expect)

    def test_asymmetric_rows_symmetrize_to_half(self):
        # drive row 0 toward (0, 1) and row 1 toward (0, 0) pre-symmetrization
        gens = trigger.init_generators(2, 2, seed=0)
        with torch.no_grad():
            gens.w_topology.copy_(torch.tensor([[40.0, -40.0], [-40.0, -40.0]], dtype=torch.float64))
        region = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
        soft = trigger.soft_topology(gens, region).detach().numpy()
        assert np.allclose(soft, [[0.0, 0.5], [0.5, 0.0]], atol=1e-15)

    def test_symmetric_zero_diagonal_in_range(self, rng):
        gens = trigger.init_generators(5, 2, seed=8)
        region = torch.tensor(
            (rng.random((5, 5)) < 0.4).astype(float), dtype=torch.float64
        )
        region = torch.triu(region, 1) + torch.triu(region, 1).T
        soft = trigger.soft_topology(gens, region).detach().numpy()
        assert np.allclose(soft, soft.T)
        assert not soft.diagonal().any()
        assert ((soft >= 0) & (soft <= 1)).all()


class TestGenerateFeatures:
    def test_zero_generator_gives_zero(self):
        gens = trigger.init_generators(3, 2, seed=0)
        with torch.no_grad():
            gens.w_feature.zero_()
        x = torch.tensor([[1.0, -2.0], [3.0, 4.0], [0.5, 0.5]], dtype=torch.float64)
        assert not trigger.generate_features(gens, x).any()

    def test_identity_passes_non_negative_input(self):
        gens = trigger.init_generators(3, 2, seed=0)
        with torch.no_grad():
            gens.w_feature.copy_(torch.eye(2, dtype=torch.float64))
        x = torch.tensor([[1.0, 2.0], [0.0, 0.25], [3.0, 0.0]], dtype=torch.float64)
        assert torch.equal(trigger.generate_features(gens, x), x)

    def test_shape_preserved(self, rng):
        gens = trigger.init_generators(4, 3, seed=1)
        x = torch.tensor(rng.normal(size=(4, 3)), dtype=torch.float64)
        out = trigger.generate_features(gens, x)
        assert out.shape == (4, 3)
        assert (out >= 0).all()  # rectifier output


class TestTriggerInstance:
    def test_validation(self):
        good = np.array([[0, 1], [1, 0]], dtype=float)
        trigger.TriggerInstance(adjacency=good, features=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            trigger.TriggerInstance(adjacency=np.array([[0, 1], [0, 0]], dtype=float), features=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            trigger.TriggerInstance(adjacency=np.eye(2), features=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            trigger.TriggerInstance(adjacency=good * 0.5, features=np.zeros((2, 3)))

    def test_build_trigger_respects_ablation_flags(self):
        g = host_graph()
        nodes = [0, 1, 2, 3]
        gens = trigger.init_generators(4, 3, seed=2)
        with_topo = trigger.build_trigger(gens, g, nodes, use_topology=False, use_features=True)
        region = g.adjacency()[np.ix_(nodes, nodes)]
        assert np.array_equal(with_topo.adjacency, region)
        with_feat = trigger.build_trigger(gens, g, nodes, use_topology=True, use_features=False)
        assert np.array_equal(with_feat.features, g.features[nodes])


def k4_instance(feature_rows):
    adj = np.ones((4, 4)) - np.eye(4)
    return trigger.TriggerInstance(adjacency=adj, features=np.asarray(feature_rows, dtype=np.float64))


class TestInject:
    def test_k4_into_sixteen_node_graph(self):
        g = host_graph()
        nodes = [2, 5, 9, 11]
        inst = k4_instance(np.zeros((4, 3)))
        poisoned = trigger.inject(g, nodes, inst)
        node_set = set(nodes)
        internal = [e for e in poisoned.edges if e[0] in node_set and e[1] in node_set]
        assert len(internal) == 6
        external_before = {e for e in g.edges if not (e[0] in node_set and e[1] in node_set)}
        external_after = {e for e in poisoned.edges if not (e[0] in node_set and e[1] in node_set)}
        assert external_before == external_after
        assert poisoned.num_nodes == g.num_nodes
        assert poisoned.label == g.label

    def test_feature_rows_land_on_selected_nodes(self):
        g = host_graph()
        nodes = [1, 4, 7, 13]
        rows = np.arange(12, dtype=np.float64).reshape(4, 3)
        poisoned = trigger.inject(g, nodes, k4_instance(rows))
        for i, v in enumerate(nodes):
            assert np.array_equal(poisoned.features[v], rows[i])
        untouched = [v for v in range(g.num_nodes) if v not in set(nodes)]
        assert np.array_equal(poisoned.features[untouched], g.features[untouched])

    def test_empty_trigger_on_isolated_nodes_is_identity(self):
        g = Graph(
            id=0,
            num_nodes=6,
            edges=frozenset({(4, 5)}),
            features=np.abs(np.random.default_rng(0).normal(size=(6, 2))),
            label=0,
        )
        nodes = [0, 1, 2]
        inst = trigger.TriggerInstance(
            adjacency=np.zeros((3, 3)), features=g.features[nodes].copy()
        )
        poisoned = trigger.inject(g, nodes, inst)
        assert graphs_equal(poisoned, g)

    def test_sever_external_drops_boundary_edges(self):
        g = host_graph()
        nodes = [0, 1, 2, 3]
        inst = k4_instance(np.zeros((4, 3)))
        poisoned = trigger.inject(g, nodes, inst, sever_external=True)
        node_set = set(nodes)
        for u, v in poisoned.edges:
            inside = u in node_set and v in node_set
            outside = u not in node_set and v not in node_set
            assert inside or outside

    def test_size_mismatch_rejected(self):
        g = host_graph()
        with pytest.raises(ValueError):
            trigger.inject(g, [0, 1, 2], k4_instance(np.zeros((4, 3))))


class TestLedger:
    def test_restore_round_trip(self):
        g = host_graph()
        ledger = trigger.PoisonLedger()
        poisoned = trigger.inject(g, [2, 5, 9, 11], k4_instance(np.ones((4, 3))), ledger=ledger)
        restored = ledger.restore(poisoned)
        assert graphs_equal(restored, g)

    def test_restore_round_trip_with_severed_edges(self):
        g = host_graph()
        ledger = trigger.PoisonLedger()
        poisoned = trigger.inject(
            g, [0, 1, 2, 3], k4_instance(np.ones((4, 3))), ledger=ledger, sever_external=True
        )
        assert graphs_equal(ledger.restore(poisoned), g)

    def test_duplicate_entry_rejected(self):
        g = host_graph()
        ledger = trigger.PoisonLedger()
        trigger.inject(g, [0, 1, 2, 3], k4_instance(np.zeros((4, 3))), ledger=ledger)
        with pytest.raises(ValueError):
            trigger.inject(g, [0, 1, 2, 3], k4_instance(np.zeros((4, 3))), ledger=ledger)

    def test_label_diff_count_zero_without_relabeling(self, small_dataset):
        ledger = trigger.PoisonLedger()
        g = small_dataset.graphs[0]
        poisoned = trigger.inject(g, [0, 1, 2], trigger.TriggerInstance(adjacency=np.ones((3, 3)) - np.eye(3), features=np.zeros((3, 4))), ledger=ledger)
        updated = small_dataset.replace_graphs({g.id: poisoned})
        assert ledger.label_diff_count(updated) == 0

    def test_label_diff_counts_relabeled_graphs(self, small_dataset):
        import dataclasses

        ledger = trigger.PoisonLedger()
        g = small_dataset.graphs[0]
        poisoned = trigger.inject(g, [0, 1, 2], trigger.TriggerInstance(adjacency=np.zeros((3, 3)), features=np.zeros((3, 4))), ledger=ledger)
        flipped = dataclasses.replace(poisoned, label=1 - poisoned.label)
        updated = small_dataset.replace_graphs({g.id: flipped})
        assert ledger.label_diff_count(updated) == 1


class TestPoisonedTensors:
    def test_matches_materialized_injection(self):
        g = host_graph()
        nodes = [0, 3, 6, 9]
        gens = trigger.init_generators(4, 3, seed=4)
        adj_t, x_t = trigger.poisoned_tensors(g, nodes, gens)
        inst = trigger.build_trigger(gens, g, nodes)
        poisoned = trigger.inject(g, nodes, inst)
        assert np.array_equal(adj_t.detach().numpy(), poisoned.adjacency())
        assert np.array_equal(x_t.detach().numpy(), poisoned.features)

    def test_ablation_flags_match_materialized_path(self):
        g = host_graph()
        nodes = [1, 2, 4, 8]
        gens = trigger.init_generators(4, 3, seed=6)
        for use_topo, use_feat in itertools.product((True, False), repeat=2):
            adj_t, x_t = trigger.poisoned_tensors(
                g, nodes, gens, use_topology=use_topo, use_features=use_feat
            )
            inst = trigger.build_trigger(gens, g, nodes, use_topology=use_topo, use_features=use_feat)
            poisoned = trigger.inject(g, nodes, inst)
            assert np.array_equal(adj_t.detach().numpy(), poisoned.adjacency())
            assert np.array_equal(x_t.detach().numpy(), poisoned.features)

    def test_relaxed_path_gradients_match_finite_differences(self):
        # two-graph toy problem: summed target cross-entropy through the
        # relaxed (identity-binarize) path, differentiated w.r.t. all four
        # generator tensors
        rng = np.random.default_rng(7)
        graphs = [host_graph(rng, num_nodes=7, gid=0), host_graph(rng, num_nodes=8, gid=1)]
        placements = {0: [0, 2, 4], 1: [1, 3, 5]}
        model = neuralnet.build_model("gcn-mean", 3, 2, hidden_dim=8, seed=13)
        gens = trigger.init_generators(3, 3, seed=13)
        params = [gens.w_topology, gens.b_topology, gens.w_feature, gens.b_feature]

        def loss_t():
            total = torch.zeros((), dtype=torch.float64)
            for g in graphs:
                adj_t, x_t = trigger.poisoned_tensors(
                    g,
                    placements[g.id],
                    gens,
                    train_topology=True,
                    train_features=True,
                    relax_binarize=True,
                )
                logits = model(adj_t, x_t)
                total = total + (-torch.log_softmax(logits, dim=0)[1])
            return total

        loss = loss_t()
        analytic = torch.autograd.grad(loss, params)
        numeric = central_difference_grads(lambda: float(loss_t()), params, h=1e-5)
        assert max_relative_error(list(analytic), numeric) < 1e-3


class TestPipelines:
    def test_adaptive_pipeline_poisons_with_ledger(self, small_model, small_dataset):
        gens = trigger.init_generators(3, 4, seed=0)
        sel = selection.SelectionConfig(trigger_size=3, candidate_multiplier=2, poison_fraction=0.1)
        pipe = trigger.TriggerPipeline(small_model, gens, sel, seed=0)
        ledger = trigger.PoisonLedger()
        g = small_dataset.graphs[0]
        poisoned = pipe.poison(g, ledger=ledger)
        assert poisoned.num_nodes == g.num_nodes
        assert poisoned.label == g.label
        assert ledger.poisoned_ids() == [g.id]
        assert graphs_equal(ledger.restore(poisoned), g)

    def test_fixed_pipeline_places_same_trigger(self, small_dataset):
        inst = k4_instance(np.zeros((4, 4)))
        pipe = trigger.FixedTriggerPipeline(inst, seed=0)
        g = small_dataset.graphs[0]
        a = pipe.poison(g)
        b = pipe.poison(g)
        assert graphs_equal(a, b)

    def test_random_placement_seed_stability(self, small_model, small_dataset):
        gens = trigger.init_generators(3, 4, seed=0)
        sel = selection.SelectionConfig(trigger_size=3, candidate_multiplier=2, poison_fraction=0.1)
        pipe = trigger.TriggerPipeline(small_model, gens, sel, placement="random", seed=5)
        g = small_dataset.graphs[1]
        assert pipe.choose_nodes(g) == pipe.choose_nodes(g)


class TestGeneratorPersistence:
    def test_round_trip(self, tmp_path):
        gens = trigger.init_generators(4, 3, seed=11)
        path = tmp_path / "gens.json"
        trigger.save_generators(gens, path)
        loaded = trigger.load_generators(path)
        assert torch.equal(loaded.w_topology, gens.w_topology)
        assert torch.equal(loaded.b_topology, gens.b_topology)
        assert torch.equal(loaded.w_feature, gens.w_feature)
        assert torch.equal(loaded.b_feature, gens.b_feature)
        assert trigger.generators_to_json(loaded) == trigger.generators_to_json(gens)

    def test_format_tag_checked(self):
        with pytest.raises(ValueError):
            trigger.generators_from_json('{"format": "other"}')
