"""Staged adversarial optimization of the trigger generators.

The attack proceeds in stages after a surrogate classifier is trained on
the clean data: hard target-class samples are selected, trigger locations
are chosen per graph, and then topology and feature generators are trained
in alternation against per-channel discriminators. Each stage runs a fixed
number of epochs in which the discriminator takes one ascent step on its
real-versus-poisoned objective and the active generator takes one descent
step on attack loss plus the weighted discriminator term. After every stage
the current triggers are re-materialized into the training set and the
surrogate is fine-tuned on it, so generator, discriminator and surrogate
co-adapt. The other generator's parameters are never touched during a
stage, which keeps the alternation clean.
"""

from __future__ import annotations

import copy
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import evaluation, neuralnet, selection, trigger
from .graphcore import Graph, GraphDataset

LOG_EPS = 1e-12

ABLATION_VARIANTS = (
    "full",
    "no_hard_samples",
    "no_location",
    "no_feature_gen",
    "no_topology_gen",
    "no_adversarial",
)


@dataclass
class AttackConfig:
    """All knobs of the staged attack. Defaults mirror the study protocol."""

    target_label: int
    poison_fraction: float = 0.05
    trigger_size: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    epochs_per_stage: int = 20
    outer_iterations: int = 3
    learning_rate: float = 1e-3
    # Step size for the generator/discriminator optimizers. The classifier
    # rate above is the study protocol's 0.001; the adversarial players'
    # rate is a free choice and both sides share it.
    generator_learning_rate: float = 8e-3
    # L2 pull on the generator weight matrices (biases exempt). Drives the
    # transforms toward host-insensitive output so a trigger trained on
    # target-class hosts carries unchanged onto unseen test hosts.
    generator_weight_decay: float = 0.5
    # L2 on the feature discriminator. Caps how sharp its decision surface
    # can get, which bounds the fooling gradient; without it a confident
    # scorer chases the feature rows below the data manifold. The topology
    # discriminator is exempt (see run_stage).
    discriminator_weight_decay: float = 0.35
    seed: int = 0
    stealth_budget: float | None = None
    early_stop_topology: bool = False
    early_stop_feature: bool = False
    early_stop_min_gain: float = 0.005
    candidate_multiplier: int = 2
    importance_mode: str = "logit-l1"
    surrogate_epochs: int = 100
    # Keeps surrogate logits from saturating float64 softmax, which would
    # zero the attack gradient; applied to surrogate training and fine-tuning
    # only, never to the victim.
    surrogate_weight_decay: float = 3e-3
    victim_epochs: int = 100
    finetune_epochs: int = 10
    batch_size: int | None = 32
    hidden_dim: int = 32
    num_layers: int = 2
    discriminator_hidden: int = 16
    sever_external_edges: bool = False
    er_edge_prob: float = 0.8

    def validate(self) -> None:
        if not (0.0 < self.poison_fraction <= 1.0):
            raise ValueError(f"poison_fraction must be in (0, 1], got {self.poison_fraction}")
        if self.trigger_size < 2:
            raise ValueError(f"trigger_size must be >= 2, got {self.trigger_size}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.epochs_per_stage < 1:
            raise ValueError("epochs_per_stage must be >= 1")
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.early_stop_min_gain < 0:
            raise ValueError("early_stop_min_gain must be >= 0")
        if not (0.0 < self.er_edge_prob <= 1.0):
            raise ValueError("er_edge_prob must be in (0, 1]")
        if self.importance_mode not in ("logit-l1", "target-logit"):
            raise ValueError(f"unknown importance_mode {self.importance_mode!r}")

    def selection_config(self) -> selection.SelectionConfig:
        return selection.SelectionConfig(
            poison_fraction=self.poison_fraction,
            trigger_size=self.trigger_size,
            candidate_multiplier=self.candidate_multiplier,
            importance_mode=self.importance_mode,
            target_class=self.target_label if self.importance_mode == "target-logit" else None,
        )

    def train_config(
        self, epochs: int, seed: int, weight_decay: float = 0.0
    ) -> neuralnet.TrainConfig:
        return neuralnet.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=epochs,
            batch_size=self.batch_size,
            seed=seed,
            weight_decay=weight_decay,
        )


# Realness logits are squashed to (-cap, cap). An uncapped scorer saturates
# its sigmoid once it separates the poisons, and the fooling term's gradient
# carries a sigmoid-derivative factor that then underflows; the cap keeps
# the adversarial pressure alive and bounded at the same time.
LOGIT_CAP = 2.0


class MeanPoolScorer(nn.Module):
    """Perceptron over the mean-pooled node features; capped logit output."""

    def __init__(self, feature_dim: int, hidden_dim: int = 16):
        super().__init__()
        self.feature_dim = feature_dim
        self.net = nn.Sequential(
            nn.Linear(feature_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def forward(self, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        z = self.net(x.mean(dim=0)).squeeze(-1)
        return LOGIT_CAP * torch.tanh(z / LOGIT_CAP)


@dataclass
class Discriminators:
    """Realness scorers: a graph-level one for topology, a pooled-feature one."""

    topology: nn.Module
    feature: nn.Module

    def topology_parameters(self):
        return list(self.topology.parameters())

    def feature_parameters(self):
        return list(self.feature.parameters())


def init_discriminators(
    feature_dim: int, hidden_dim: int = 16, seed: int = 0
) -> Discriminators:
    # The topology scorer reads a degree channel, not node features, so its
    # realness judgment (and its gradient on the generator) is structural.
    topo = neuralnet.build_model(
        "gcn-mean", 1, 2, hidden_dim=hidden_dim, num_layers=2, seed=seed
    )
    feat = MeanPoolScorer(feature_dim, hidden_dim)
    feat.double()
    neuralnet._seeded_init(feat, seed + 1)
    return Discriminators(topology=topo, feature=feat)


def _topology_prob(disc: nn.Module, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    # Degree input keeps the scorer blind to features while staying
    # differentiable through a soft adjacency.
    deg = adj.sum(dim=1, keepdim=True) / adj.shape[0]
    logits = disc(adj, deg)
    return torch.sigmoid(logits[1] - logits[0])


def _feature_prob(disc: nn.Module, adj: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(disc(adj, x))


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, min=LOG_EPS))


def _attack_loss_t(model: nn.Module, adj: torch.Tensor, x: torch.Tensor, target: int) -> torch.Tensor:
    # log_softmax rather than softmax().log(): the latter rounds the target
    # probability to exactly 1.0 once the logit gap passes ~37, which zeroes
    # the gradient and freezes the generators mid-run.
    logits = model(adj, x)
    return -torch.log_softmax(logits, dim=0)[target]


def attack_loss(model, poisoned_graph: Graph, target_label: int) -> float:
    """Cross-entropy of one poisoned graph toward the target class."""
    logits = neuralnet.forward(model, poisoned_graph)
    if not (0 <= target_label < logits.shape[0]):
        raise ValueError(f"target_label {target_label} outside class range")
    probs = selection.softmax_probabilities(logits)
    return float(-math.log(max(probs[target_label], LOG_EPS)))


def _disc_objective(
    prob_fn, disc: nn.Module, clean, poisoned
) -> torch.Tensor:
    """sum log D(clean) + sum log(1 - D(poisoned)); the realness objective."""
    total = torch.zeros((), dtype=torch.float64)
    for adj, x in clean:
        total = total + _clamped_log(prob_fn(disc, adj, x))
    for adj, x in poisoned:
        total = total + _clamped_log(1.0 - prob_fn(disc, adj, x))
    return total


def _graph_pairs(graphs: list[Graph]):
    return [neuralnet.graph_tensors(g) for g in graphs]


def discriminator_loss_topology(
    disc: nn.Module, clean_graphs: list[Graph], poisoned_graphs: list[Graph]
) -> float:
    """Value of the topology discriminator's objective on materialized graphs."""
    with torch.no_grad():
        return float(
            _disc_objective(
                _topology_prob, disc, _graph_pairs(clean_graphs), _graph_pairs(poisoned_graphs)
            )
        )


def discriminator_loss_feature(
    disc: nn.Module, clean_graphs: list[Graph], poisoned_graphs: list[Graph]
) -> float:
    """Value of the feature discriminator's objective on materialized graphs."""
    with torch.no_grad():
        return float(
            _disc_objective(
                _feature_prob, disc, _graph_pairs(clean_graphs), _graph_pairs(poisoned_graphs)
            )
        )


def joint_loss_topology(
    model, disc: nn.Module, poisoned_graphs: list[Graph], alpha: float, target_label: int
) -> float:
    """sum attack_loss + alpha * sum log(1 - D_t(poisoned)).

    Only the poisoned half of the discriminator objective appears here; the
    clean half does not depend on the generator and is a constant offset.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    atk = sum(attack_loss(model, g, target_label) for g in poisoned_graphs)
    with torch.no_grad():
        d = sum(
            float(_clamped_log(1.0 - _topology_prob(disc, *neuralnet.graph_tensors(g))))
            for g in poisoned_graphs
        )
    return atk + alpha * d


def joint_loss_feature(
    model, disc: nn.Module, poisoned_graphs: list[Graph], beta: float, target_label: int
) -> float:
    """sum attack_loss + beta * sum log(1 - D_f(poisoned))."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    atk = sum(attack_loss(model, g, target_label) for g in poisoned_graphs)
    with torch.no_grad():
        d = sum(
            float(_clamped_log(1.0 - _feature_prob(disc, *neuralnet.graph_tensors(g))))
            for g in poisoned_graphs
        )
    return atk + beta * d


# ---------------------------------------------------------------------------
# Attack state and stages
# ---------------------------------------------------------------------------


@dataclass
class AttackState:
    """Mutable state threaded through the staged optimization."""

    clean_dataset: GraphDataset
    config: AttackConfig
    surrogate: nn.Module
    generators: trigger.TriggerGenerators
    discriminators: Discriminators
    selected_ids: list[int]
    placements: dict[int, list[int]]
    use_topology: bool
    use_features: bool
    poisoned_dataset: GraphDataset | None = None
    ledger: trigger.PoisonLedger | None = None
    trace: list[dict] = field(default_factory=list)
    clean_sampler: np.random.Generator | None = None
    stage_asr: dict[str, float] = field(default_factory=dict)
    active: dict[str, bool] = field(default_factory=lambda: {"topology": True, "feature": True})


@contextmanager
def _frozen(*modules_or_params):
    """Temporarily drop requires_grad so inactive parts collect no grads."""
    params: list[torch.Tensor] = []
    for item in modules_or_params:
        if isinstance(item, nn.Module):
            params.extend(item.parameters())
        else:
            params.extend(item)
    states = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, s in zip(params, states):
            p.requires_grad_(s)


def _materialize(state: AttackState) -> None:
    """Regenerate every trigger from the clean originals and inject."""
    ledger = trigger.PoisonLedger()
    replacements: dict[int, Graph] = {}
    for gid in state.selected_ids:
        host = state.clean_dataset.graph(gid)
        instance = trigger.build_trigger(
            state.generators,
            host,
            state.placements[gid],
            use_topology=state.use_topology,
            use_features=state.use_features,
        )
        replacements[gid] = trigger.inject(
            host,
            state.placements[gid],
            instance,
            ledger,
            sever_external=state.config.sever_external_edges,
        )
    state.poisoned_dataset = state.clean_dataset.replace_graphs(replacements)
    state.ledger = ledger


def _poisoned_train_asr(state: AttackState) -> float:
    """Fraction of materialized poisoned graphs the surrogate sends to y_t."""
    hits = 0
    for gid in state.selected_ids:
        g = state.poisoned_dataset.graph(gid)
        if neuralnet.predict(state.surrogate, g) == state.config.target_label:
            hits += 1
    return hits / len(state.selected_ids)


def _live_pair(state: AttackState, gid: int, train_topology: bool, train_features: bool):
    host = state.clean_dataset.graph(gid)
    return trigger.poisoned_tensors(
        host,
        state.placements[gid],
        state.generators,
        train_topology=train_topology,
        train_features=train_features,
        use_topology=state.use_topology,
        use_features=state.use_features,
        sever_external=state.config.sever_external_edges,
    )


def _live_poisoned_pairs(state: AttackState, train_topology: bool, train_features: bool):
    return [
        _live_pair(state, gid, train_topology, train_features)
        for gid in state.selected_ids
    ]


def _sample_clean(state: AttackState) -> list[Graph]:
    """Equal-size clean batch of untouched target-class train graphs.

    The poisons live inside the target class's train split, so that class
    is the population they must blend into; sampling other classes would
    let the generators drift toward a foreign manifold that still fools
    the discriminators but not a per-class auditor.
    """
    pool = [
        g
        for g in state.clean_dataset.train_graphs()
        if g.id not in set(state.selected_ids)
        and g.label == state.config.target_label
    ]
    if not pool:
        return []
    k = min(len(state.selected_ids), len(pool))
    picks = state.clean_sampler.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(picks.tolist())]


def run_stage(state: AttackState, stage: str, iteration: int) -> None:
    """One stage: alternate discriminator ascent and generator descent.

    ``stage`` is "topology" or "feature". The other channel's generator and
    discriminator parameters are left bit-identical.
    """
    if stage not in ("topology", "feature"):
        raise ValueError(f"unknown stage {stage!r}")
    cfg = state.config
    if stage == "topology":
        gen_params = state.generators.topology_parameters()
        disc = state.discriminators.topology
        prob_fn = _topology_prob
        weight = cfg.alpha
        train_flags = {"train_topology": True, "train_features": False}
    else:
        gen_params = state.generators.feature_parameters()
        disc = state.discriminators.feature
        prob_fn = _feature_prob
        weight = cfg.beta
        train_flags = {"train_topology": False, "train_features": True}

    # Decay only the weight matrix: the bias then carries the trigger's
    # magnitude, which does not depend on the host rows a test graph brings.
    gen_weight, gen_bias = gen_params
    gen_opt = torch.optim.Adam(
        [
            {"params": [gen_weight], "weight_decay": cfg.generator_weight_decay},
            {"params": [gen_bias], "weight_decay": 0.0},
        ],
        lr=cfg.generator_learning_rate,
        betas=neuralnet.ADAM_BETAS,
    )
    # Only the feature scorer is decayed: its chase would otherwise drag the
    # trigger rows below the data manifold. The topology scorer's pull ends
    # at reference-like block density, a state the attack also wants, so it
    # can stay sharp.
    disc_opt = torch.optim.Adam(
        disc.parameters(),
        lr=cfg.generator_learning_rate,
        betas=neuralnet.ADAM_BETAS,
        weight_decay=cfg.discriminator_weight_decay if stage == "feature" else 0.0,
    )

    for epoch in range(cfg.epochs_per_stage):
        clean_batch = _sample_clean(state)
        clean_pairs = _graph_pairs(clean_batch)

        # Discriminator ascent on the realness objective; triggers detached.
        disc_opt.zero_grad()
        detached = _live_poisoned_pairs(state, train_topology=False, train_features=False)
        disc_obj = _disc_objective(prob_fn, disc, clean_pairs, detached)
        (-disc_obj).backward()
        disc_opt.step()

        # Generator descent on attack loss plus the weighted fooling term,
        # stepped once per poisoned graph so each epoch is a full pass.
        atk_total = 0.0
        with _frozen(state.surrogate, disc):
            for gid in state.selected_ids:
                gen_opt.zero_grad()
                adj, x = _live_pair(state, gid, **train_flags)
                atk_i = _attack_loss_t(state.surrogate, adj, x, cfg.target_label)
                fool_i = _clamped_log(1.0 - prob_fn(disc, adj, x))
                (atk_i + weight * fool_i).backward()
                gen_opt.step()
                atk_total += float(atk_i.detach())

        with torch.no_grad():
            fresh = _live_poisoned_pairs(state, train_topology=False, train_features=False)
            d_topo = float(
                _disc_objective(_topology_prob, state.discriminators.topology, clean_pairs, fresh)
            )
            d_feat = float(
                _disc_objective(_feature_prob, state.discriminators.feature, clean_pairs, fresh)
            )
            hits = sum(
                1
                for adj, x in fresh
                if int(np.argmax(state.surrogate(adj, x).numpy())) == cfg.target_label
            )
        state.trace.append(
            {
                "iteration": iteration,
                "stage": stage,
                "epoch": epoch,
                "attack_loss": atk_total,
                "disc_loss_topology": d_topo,
                "disc_loss_feature": d_feat,
                "train_asr": hits / len(state.selected_ids),
            }
        )


def _finetune_surrogate(state: AttackState, seed: int) -> None:
    cfg = state.config
    state.surrogate = neuralnet.fine_tune(
        state.surrogate,
        state.poisoned_dataset,
        epochs=cfg.finetune_epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=seed,
        weight_decay=cfg.surrogate_weight_decay,
    )


@dataclass
class DpsbaRun:
    """Everything a downstream consumer needs from one attack run."""

    poisoned_dataset: GraphDataset
    generators: trigger.TriggerGenerators
    model: nn.Module  # victim trained on the poisoned data
    ledger: trigger.PoisonLedger
    trace: list[dict]
    surrogate: nn.Module
    selected_ids: list[int]
    placements: dict[int, list[int]]
    variant: str
    surrogate_arch: str
    candidate_multiplier: int
    base_seed: int

    def pipeline(self) -> trigger.TriggerPipeline:
        """Test-time crafting path matching this run's variant."""
        cfg_sel = selection.SelectionConfig(
            poison_fraction=1.0,
            trigger_size=self.generators.trigger_size,
            candidate_multiplier=self.candidate_multiplier,
            importance_mode="logit-l1",
        )
        return trigger.TriggerPipeline(
            surrogate=self.surrogate,
            generators=self.generators,
            selection_config=cfg_sel,
            use_topology=self.variant != "no_topology_gen",
            use_features=self.variant != "no_feature_gen",
            placement="random" if self.variant == "no_location" else "importance",
            seed=self.base_seed,
        )


def initialize_attack(
    dataset: GraphDataset,
    surrogate_arch: str,
    config: AttackConfig,
    variant: str = "full",
) -> AttackState:
    """Surrogate training, sample selection, placement and first injection."""
    config.validate()
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {ABLATION_VARIANTS}")
    if not (0 <= config.target_label < dataset.num_classes):
        raise ValueError(
            f"target_label {config.target_label} outside 0..{dataset.num_classes - 1}"
        )
    surrogate = neuralnet.train_classifier(
        dataset,
        surrogate_arch,
        config.train_config(
            config.surrogate_epochs, config.seed, config.surrogate_weight_decay
        ),
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
    )
    discs = init_discriminators(
        dataset.feature_dim, hidden_dim=config.discriminator_hidden, seed=config.seed + 5
    )

    m = config.trigger_size
    if variant == "no_hard_samples":
        eligible = sorted(
            g.id
            for g in dataset.train_graphs()
            if g.label == config.target_label and g.num_nodes >= m
        )
        if not eligible:
            raise ValueError("no eligible target-class train graphs")
        count = math.ceil(config.poison_fraction * len(eligible))
        rng = np.random.default_rng(config.seed + 6)
        selected = sorted(rng.choice(eligible, size=count, replace=False).tolist())
    else:
        selected = selection.select_hard_samples(
            surrogate, dataset, config.target_label, config.poison_fraction, min_nodes=m
        )

    sel_cfg = config.selection_config()
    placements: dict[int, list[int]] = {}
    rng_loc = np.random.default_rng(config.seed + 7)
    for gid in selected:
        g = dataset.graph(gid)
        if variant == "no_location":
            placements[gid] = sorted(
                rng_loc.choice(g.num_nodes, size=m, replace=False).tolist()
            )
        else:
            placements[gid] = selection.select_trigger_nodes(surrogate, g, sel_cfg)

    if variant == "no_adversarial":
        config = _replaced(config)

    gens = _init_live_generators(dataset, config, selected, placements)

    state = AttackState(
        clean_dataset=dataset,
        config=config,
        surrogate=surrogate,
        generators=gens,
        discriminators=discs,
        selected_ids=list(selected),
        placements=placements,
        use_topology=variant != "no_topology_gen",
        use_features=variant != "no_feature_gen",
        clean_sampler=np.random.default_rng(config.seed + 2),
    )
    _materialize(state)
    return state


def _replaced(config: AttackConfig) -> AttackConfig:
    out = copy.deepcopy(config)
    out.alpha = 0.0
    out.beta = 0.0
    return out


_INIT_SEED_STRIDE = 97
_INIT_DRAWS = 200
_INIT_MIN_ALIVE = 0.25


def _init_live_generators(
    dataset: GraphDataset,
    config: AttackConfig,
    selected: list[int],
    placements: dict[int, list[int]],
) -> trigger.TriggerGenerators:
    """Random generator init, redrawn until the rectifier is trainable.

    With zero biases and small uniform weights, an output dimension whose
    pre-activation is negative on every host row never receives gradient
    and stays frozen at zero. The attacker owns the init, so draw
    deterministic candidate seeds until each output dimension fires on at
    least a quarter of the rows the trigger will actually replace; keep the
    best draw if none clears the bar.
    """
    rows = np.concatenate(
        [dataset.graph(gid).features[sorted(placements[gid])] for gid in selected]
    )
    best = None
    best_alive = -1.0
    for k in range(_INIT_DRAWS):
        cand = trigger.init_generators(
            config.trigger_size,
            dataset.feature_dim,
            seed=config.seed + 4 + _INIT_SEED_STRIDE * k,
        )
        w = cand.w_feature.detach().numpy()
        b = cand.b_feature.detach().numpy()
        alive = float(((rows @ w.T + b) > 0).mean(axis=0).min())
        if alive > best_alive:
            best, best_alive = cand, alive
        if alive >= _INIT_MIN_ALIVE:
            return cand
    return best


def run_dpsba(
    dataset: GraphDataset,
    surrogate_arch: str,
    config: AttackConfig,
    variant: str = "full",
) -> DpsbaRun:
    """Full staged attack; returns the poisoned data, artifacts and victim.

    The victim ("backdoored model") is a fresh classifier of the surrogate
    architecture trained from scratch on the poisoned dataset, which is what
    a defender would produce from the delivered data.
    """
    state = initialize_attack(dataset, surrogate_arch, config, variant)
    cfg = state.config
    stages = []
    if state.use_topology:
        stages.append("topology")
    if state.use_features:
        stages.append("feature")

    previous_asr = {s: _poisoned_train_asr(state) for s in stages}
    finetune_round = 0
    for iteration in range(cfg.outer_iterations):
        for stage in stages:
            if not state.active[stage]:
                continue
            run_stage(state, stage, iteration)
            _materialize(state)
            _finetune_surrogate(state, seed=cfg.seed + 100 + finetune_round)
            finetune_round += 1
            current = _poisoned_train_asr(state)
            flag = (
                cfg.early_stop_topology if stage == "topology" else cfg.early_stop_feature
            )
            if flag and current - previous_asr[stage] < cfg.early_stop_min_gain:
                state.active[stage] = False
            previous_asr[stage] = current

    victim = neuralnet.train_classifier(
        state.poisoned_dataset,
        surrogate_arch,
        cfg.train_config(cfg.victim_epochs, cfg.seed + 1),
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
    )
    return DpsbaRun(
        poisoned_dataset=state.poisoned_dataset,
        generators=state.generators,
        model=victim,
        ledger=state.ledger,
        trace=state.trace,
        surrogate=state.surrogate,
        selected_ids=state.selected_ids,
        placements=state.placements,
        variant=variant,
        surrogate_arch=surrogate_arch,
        candidate_multiplier=cfg.candidate_multiplier,
        base_seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Transfer and ablation wrappers
# ---------------------------------------------------------------------------


def evaluate_run(
    run: DpsbaRun,
    clean_dataset: GraphDataset,
    config: AttackConfig,
    method: str,
    victim: nn.Module | None = None,
    target_arch: str | None = None,
    detector: evaluation.Detector | None = None,
    clean_model: nn.Module | None = None,
    detector_kind: str = "stats-mahalanobis",
    detector_per_label: bool = True,
) -> evaluation.MetricsReport:
    """Measure one finished run with the standard protocol."""
    target_arch = target_arch or run.surrogate_arch
    victim = victim if victim is not None else run.model
    if clean_model is None:
        clean_model = neuralnet.train_classifier(
            clean_dataset,
            target_arch,
            config.train_config(config.victim_epochs, config.seed + 1),
            hidden_dim=config.hidden_dim,
            num_layers=config.num_layers,
        )
    if detector is None:
        detector = evaluation.audit_detector(
            run.poisoned_dataset, config.seed, detector_kind, detector_per_label
        )
    return evaluation.build_metrics_report(
        method=method,
        clean_dataset=clean_dataset,
        poisoned_dataset=run.poisoned_dataset,
        ledger=run.ledger,
        victim=victim,
        clean_model=clean_model,
        pipeline=run.pipeline(),
        detector=detector,
        seed=config.seed,
        surrogate_arch=run.surrogate_arch,
        target_arch=target_arch,
        stealth_budget=config.stealth_budget,
    )


def run_transfer(
    dataset: GraphDataset,
    surrogate_arch: str,
    target_arch: str,
    config: AttackConfig,
    detector: evaluation.Detector | None = None,
) -> tuple[DpsbaRun, nn.Module, evaluation.MetricsReport]:
    """Craft with one architecture, train the victim with another.

    With ``target_arch == surrogate_arch`` the victim coincides with the
    run's own model, so the report matches a plain attack run exactly.
    """
    run = run_dpsba(dataset, surrogate_arch, config)
    victim = neuralnet.train_classifier(
        run.poisoned_dataset,
        target_arch,
        config.train_config(config.victim_epochs, config.seed + 1),
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
    )
    report = evaluate_run(
        run,
        dataset,
        config,
        method=f"dpsba:{surrogate_arch}->{target_arch}",
        victim=victim,
        target_arch=target_arch,
        detector=detector,
    )
    return run, victim, report


def run_ablation(
    dataset: GraphDataset,
    config: AttackConfig,
    variant: str,
    surrogate_arch: str = "gcn-mean",
    detector: evaluation.Detector | None = None,
    clean_model: nn.Module | None = None,
) -> tuple[DpsbaRun, evaluation.MetricsReport]:
    """Attack with one component disabled, measured like the full attack."""
    run = run_dpsba(dataset, surrogate_arch, config, variant=variant)
    method = "dpsba" if variant == "full" else f"dpsba-{variant.replace('_', '-')}"
    report = evaluate_run(
        run, dataset, config, method=method, detector=detector, clean_model=clean_model
    )
    return run, report
