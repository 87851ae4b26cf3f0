"""Classifiers: forward semantics, gradients, training, persistence."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from dpsba import neuralnet
from dpsba.graphcore import Graph, generate_synthetic, permute_graph, split_dataset
from dpsba.neuralnet import (
    ARCHITECTURES,
    TrainConfig,
    TrainingError,
    accuracy,
    build_model,
    fine_tune,
    forward,
    graph_tensors,
    load_model,
    model_from_json,
    model_to_json,
    normalized_adjacency,
    predict,
    save_model,
    train_classifier,
)
from oracles import central_difference_grads, max_relative_error, random_graph, softmax_reference


def toy_graph(seed=0, num_nodes=5, feature_dim=3):
    rng = np.random.default_rng(seed)
    return random_graph(rng, num_nodes, feature_dim, edge_prob=0.5, gid=0, label=1)


def zero_params(model):
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


class TestNormalizedAdjacency:
    def test_three_node_path_closed_form(self):
        adj = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], dtype=torch.float64)
        s = normalized_adjacency(adj)
        # degrees with self loops: [2, 3, 2]
        expect = np.array(
            [
                [1 / 2, 1 / np.sqrt(6), 0],
                [1 / np.sqrt(6), 1 / 3, 1 / np.sqrt(6)],
                [0, 1 / np.sqrt(6), 1 / 2],
            ]
        )
        assert np.allclose(s.numpy(), expect)


class TestForward:
    def test_zero_model_gives_equal_logits(self):
        for arch in ARCHITECTURES:
            model = zero_params(build_model(arch, 3, 4, hidden_dim=8, seed=0))
            logits = forward(model, toy_graph())
            assert logits.shape == (4,)
            assert np.allclose(logits, logits[0])

    def test_single_node_gin_equals_perceptron_stack(self):
        model = build_model("gin-sum", 3, 2, hidden_dim=8, seed=5)
        g = Graph(id=0, num_nodes=1, edges=frozenset(), features=np.array([[0.3, -0.2, 0.9]]), label=0)
        got = forward(model, g)
        with torch.no_grad():
            h = torch.tensor(g.features, dtype=torch.float64)
            for mlp in model.mlps:
                h = mlp((1.0 + model.eps) * h)
            expect = model.head(h.sum(dim=0)).numpy()
        assert np.allclose(got, expect)

    def test_permutation_invariance_all_architectures(self, rng):
        for arch in ARCHITECTURES:
            model = build_model(arch, 4, 3, hidden_dim=8, seed=1)
            for trial in range(5):
                g = random_graph(rng, 9, 4, edge_prob=0.4)
                perm = rng.permutation(9).tolist()
                a = forward(model, g)
                b = forward(model, permute_graph(g, perm))
                assert np.max(np.abs(a - b)) < 1e-5

    def test_feature_width_mismatch_rejected(self):
        model = build_model("gcn-mean", 4, 2, seed=0)
        with pytest.raises(ValueError):
            forward(model, toy_graph(feature_dim=3))


class TestGradients:
    def loss_and_params(self, arch, seed=11):
        model = build_model(arch, 3, 2, hidden_dim=8, seed=seed)
        g = toy_graph(seed=seed)
        adj, x = graph_tensors(g)

        def loss_t():
            logits = model(adj, x)
            return -torch.log_softmax(logits, dim=0)[g.label]

        return model, loss_t

    @pytest.mark.parametrize("arch", ARCHITECTURES)
    def test_cross_entropy_gradients_match_finite_differences(self, arch):
        model, loss_t = self.loss_and_params(arch)
        params = list(model.parameters())
        loss = loss_t()
        analytic = torch.autograd.grad(loss, params)
        numeric = central_difference_grads(lambda: float(loss_t()), params, h=1e-4)
        assert max_relative_error(list(analytic), numeric) < 1e-3


class TestPredictAccuracy:
    def test_larger_logit_wins(self, small_model, small_dataset):
        g = small_dataset.graphs[0]
        logits = forward(small_model, g)
        assert predict(small_model, g) == int(np.argmax(logits))

    def test_tie_goes_to_lowest_class(self):
        model = zero_params(build_model("gcn-mean", 3, 3, seed=0))
        assert predict(model, toy_graph()) == 0

    def test_predict_agrees_with_softmax_argmax(self, rng):
        # softmax is monotone, so its argmax must match the raw-logit argmax
        model = build_model("gcn-mean", 3, 4, hidden_dim=8, seed=3)
        for trial in range(100):
            g = random_graph(rng, 6, 3, edge_prob=0.4)
            probs = softmax_reference(forward(model, g))
            assert predict(model, g) == int(np.argmax(probs))

    def test_accuracy_matches_manual_loop(self, small_model, small_dataset, rng):
        graphs = list(small_dataset.graphs)
        expect = np.mean([predict(small_model, g) == g.label for g in graphs])
        assert accuracy(small_model, graphs) == pytest.approx(expect)

    def test_accuracy_extremes(self, small_dataset):
        graphs = small_dataset.graphs[:5]
        always = [predict(zero_params(build_model("gcn-mean", 4, 2, seed=0)), g) for g in graphs]
        assert set(always) == {0}
        relabeled_right = [
            Graph(g.id, g.num_nodes, g.edges, g.features, label=0) for g in graphs
        ]
        relabeled_wrong = [
            Graph(g.id, g.num_nodes, g.edges, g.features, label=1) for g in graphs
        ]
        model = zero_params(build_model("gcn-mean", 4, 2, seed=0))
        assert accuracy(model, relabeled_right) == 1.0
        assert accuracy(model, relabeled_wrong) == 0.0


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-1.0).validate()
        with pytest.raises(ValueError):
            TrainConfig(early_stop_patience=0).validate()


class TestTraining:
    def test_reference_scale_clean_accuracy(self, clean_model, reference_dataset):
        assert accuracy(clean_model, reference_dataset.test_graphs()) >= 0.90

    def test_determinism(self, small_dataset):
        cfg = TrainConfig(epochs=15, seed=4)
        a = train_classifier(small_dataset, "gcn-mean", cfg, hidden_dim=16)
        b = train_classifier(small_dataset, "gcn-mean", cfg, hidden_dim=16)
        assert model_to_json(a) == model_to_json(b)

    def test_unknown_architecture_rejected(self, small_dataset):
        with pytest.raises(ValueError):
            train_classifier(small_dataset, "transformer", TrainConfig())

    def test_divergent_training_raises(self, small_dataset):
        cfg = TrainConfig(epochs=30, learning_rate=1e150, seed=0)
        with pytest.raises(TrainingError):
            train_classifier(small_dataset, "gcn-mean", cfg, hidden_dim=16)

    def test_full_batch_descent_is_monotone(self):
        ds = split_dataset(generate_synthetic(10, seed=6), 0.5, seed=6)
        train = ds.train_graphs()

        def mean_ce(model):
            total = 0.0
            for g in train:
                probs = softmax_reference(forward(model, g))
                total += -np.log(max(probs[g.label], 1e-12))
            return total / len(train)

        model = train_classifier(ds, "gcn-mean", TrainConfig(epochs=1, learning_rate=1e-4, batch_size=len(train), seed=0), hidden_dim=16)
        losses = [mean_ce(model)]
        for step in range(10):
            model = fine_tune(model, ds, epochs=1, learning_rate=1e-4, batch_size=len(train), seed=step)
            losses.append(mean_ce(model))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


class TestFineTune:
    def test_zero_epochs_returns_identical_copy(self, small_model, small_dataset):
        tuned = fine_tune(small_model, small_dataset, epochs=0)
        assert tuned is not small_model
        assert model_to_json(tuned) == model_to_json(small_model)

    def test_vanishing_learning_rate_keeps_parameters(self, small_model, small_dataset):
        tuned = fine_tune(small_model, small_dataset, epochs=2, learning_rate=1e-13, seed=0)
        for a, b in zip(small_model.parameters(), tuned.parameters()):
            assert torch.allclose(a, b, atol=1e-9)

    def test_does_not_mutate_the_input_model(self, small_model, small_dataset):
        before = model_to_json(small_model)
        fine_tune(small_model, small_dataset, epochs=2, learning_rate=1e-2, seed=0)
        assert model_to_json(small_model) == before

    def test_clean_fine_tune_keeps_clean_accuracy(self, clean_model, reference_dataset, reference_config):
        # tuning on the unmodified clean set must not cost more than 2 points
        before = accuracy(clean_model, reference_dataset.test_graphs())
        tuned = fine_tune(
            clean_model,
            reference_dataset,
            epochs=reference_config.finetune_epochs,
            learning_rate=reference_config.learning_rate,
            batch_size=reference_config.batch_size,
            seed=0,
        )
        after = accuracy(tuned, reference_dataset.test_graphs())
        assert after >= before - 0.02


class TestPersistence:
    @pytest.mark.parametrize("arch", ARCHITECTURES)
    def test_round_trip_preserves_outputs(self, arch, tmp_path):
        model = build_model(arch, 3, 2, hidden_dim=8, seed=9)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        g = toy_graph(seed=2)
        assert np.max(np.abs(forward(model, g) - forward(loaded, g))) < 1e-7
        assert model_to_json(loaded) == model_to_json(model)

    def test_format_tag_checked(self):
        with pytest.raises(ValueError):
            model_from_json('{"format": "something-else"}')
