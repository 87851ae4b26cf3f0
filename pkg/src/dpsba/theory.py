"""Detectability bounds and their numerical verification.

Two facts drive the stealth analysis. First, replacing M of N node feature
rows with trigger rows whose mean differs from the clean mean by delta (in
L1) forces a total-variation gap of at least (delta / 2) * (M / N) between
the clean and poisoned graph distributions. Second, any detector's best
achievable ranking AUC against a distribution at total variation tv from
clean is at least (1 + tv) / 2, attained by the likelihood-ratio scorer.
Both are checked numerically here on small finite distributions and on real
attack runs via the poison ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graphcore import Graph

MAX_SUPPORT = 100


@dataclass
class FiniteDistribution:
    """Probability mass function on a small finite outcome set."""

    outcomes: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.outcomes = tuple(self.outcomes)
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) != len(self.outcomes):
            raise ValueError("probs must be a vector aligned with outcomes")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ValueError("outcomes must be distinct")
        if np.any(p < -1e-12):
            raise ValueError("probabilities must be non-negative")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {total}")
        self.probs = p

    def prob(self, outcome) -> float:
        try:
            return float(self.probs[self.outcomes.index(outcome)])
        except ValueError:
            return 0.0

    @classmethod
    def from_counts(cls, counts: dict) -> "FiniteDistribution":
        keys = sorted(counts)
        total = float(sum(counts.values()))
        if total <= 0:
            raise ValueError("counts must sum to a positive value")
        return cls(tuple(keys), np.array([counts[k] / total for k in keys]))


def tv_distance(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """Total variation distance: half the L1 gap over the union support."""
    support = sorted(set(p.outcomes) | set(q.outcomes))
    return 0.5 * sum(abs(p.prob(x) - q.prob(x)) for x in support)


def mean_shift_delta(clean_mean: np.ndarray, trigger_mean: np.ndarray) -> float:
    """L1 distance between the clean and trigger feature means."""
    a = np.asarray(clean_mean, dtype=np.float64)
    b = np.asarray(trigger_mean, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mean vectors must share a shape, got {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def tv_graph_lower_bound(trigger_size: int, num_nodes: float, delta: float) -> float:
    """(delta / 2) * (M / N), clipped into [0, 1].

    ``num_nodes`` may be a population average, so it is accepted as a real
    number; it must still be at least the trigger size.
    """
    if trigger_size < 1:
        raise ValueError(f"trigger_size must be >= 1, got {trigger_size}")
    if num_nodes < trigger_size:
        raise ValueError(
            f"num_nodes ({num_nodes}) must be >= trigger_size ({trigger_size})"
        )
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return float(min(max((delta / 2.0) * (trigger_size / num_nodes), 0.0), 1.0))


def auc_lower_bound(tv: float) -> float:
    """(1 + tv) / 2; the best detector does at least this well."""
    if not (0.0 <= tv <= 1.0):
        raise ValueError(f"tv must be in [0, 1], got {tv}")
    return (1.0 + tv) / 2.0


@dataclass
class AucBoundCheck:
    empirical_best_auc: float
    bound: float
    holds: bool


def verify_auc_bound(
    p: FiniteDistribution,
    q: FiniteDistribution,
    n_samples: int = 0,
    seed: int = 0,
) -> AucBoundCheck:
    """Check AUC >= (1 + TV) / 2 for the likelihood-ratio scorer.

    The scorer s(x) = q(x) / p(x) is evaluated on every (anomalous, clean)
    outcome pair weighted by its joint probability, ties counted one half,
    which is the exact AUC of that scorer. Supports are capped at
    MAX_SUPPORT outcomes so the enumeration stays trivial; ``n_samples`` and
    ``seed`` are accepted for interface symmetry with the sampled metrics
    but the enumeration is exact and ignores them.
    """
    for name, dist in (("p", p), ("q", q)):
        if len(dist.outcomes) > MAX_SUPPORT:
            raise ValueError(
                f"{name} has {len(dist.outcomes)} outcomes; verification is "
                f"limited to {MAX_SUPPORT}"
            )
    total = 0.0
    for x, qx in zip(q.outcomes, q.probs):
        if qx <= 0.0:
            continue
        px = p.prob(x)
        for y, py in zip(p.outcomes, p.probs):
            if py <= 0.0:
                continue
            qy = q.prob(y)
            # Compare s(x) = qx/px against s(y) = qy/py without forming
            # infinities: py > 0 always holds here, so s(x) is infinite
            # exactly when px == 0.
            if px == 0.0:
                cmp = 1.0
            else:
                lhs = qx * py
                rhs = qy * px
                cmp = 1.0 if lhs > rhs else (0.5 if lhs == rhs else 0.0)
            total += qx * py * cmp
    bound = auc_lower_bound(tv_distance(p, q))
    return AucBoundCheck(
        empirical_best_auc=total,
        bound=bound,
        holds=bool(total >= bound - 1e-9),
    )


# ---------------------------------------------------------------------------
# Graph-level verification on attack runs
# ---------------------------------------------------------------------------


@dataclass
class GraphShiftReport:
    """Measured feature-distribution shift of one poisoning run."""

    empirical_tv: float
    predicted_lower_bound: float
    delta: float
    mean_num_nodes: float
    trigger_size: int
    identity_max_abs_error: float
    auc_bound: float

    def to_dict(self) -> dict:
        return {
            "empirical_tv": self.empirical_tv,
            "predicted_lower_bound": self.predicted_lower_bound,
            "delta": self.delta,
            "mean_num_nodes": self.mean_num_nodes,
            "trigger_size": self.trigger_size,
            "identity_max_abs_error": self.identity_max_abs_error,
            "auc_bound": self.auc_bound,
        }


def _first_principal_coordinate(vectors: np.ndarray) -> np.ndarray:
    centered = vectors - vectors.mean(axis=0)
    cov = centered.T @ centered / max(len(vectors), 1)
    vals, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    nz = np.flatnonzero(np.abs(axis) > 1e-12)
    if nz.size and axis[nz[0]] < 0:
        axis = -axis
    return centered @ axis


def histogram_distribution(values: np.ndarray, edges: np.ndarray) -> FiniteDistribution:
    """Histogram over shared bin edges as a FiniteDistribution on bin ids."""
    counts, _ = np.histogram(values, bins=edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("histogram received no values")
    return FiniteDistribution(tuple(range(len(counts))), counts / total)


def verify_graph_shift(
    clean_graphs: list[Graph],
    poisoned_graphs: list[Graph],
    ledger,
    bins: int = 20,
) -> GraphShiftReport:
    """Measure the pooled-feature shift of a run and compare to the bound.

    Per poisoned graph, the pooled feature mean must equal the convex
    combination of the untouched rows' mean and the trigger rows' mean with
    weight M/N; the worst absolute deviation is reported (it is an exact
    arithmetic identity, so anything beyond rounding noise indicates a
    broken injection). The empirical TV compares clean and poisoned pooled
    means after projecting onto their joint first principal coordinate and
    binning over the shared range.
    """
    if not clean_graphs or not poisoned_graphs:
        raise ValueError("need non-empty clean and poisoned graph lists")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    entries = {e.graph_id: e for e in ledger.entries}
    unpaired = [g.id for g in poisoned_graphs if g.id not in entries]
    if unpaired:
        raise ValueError(f"poisoned graphs without ledger entries: {unpaired}")

    sizes = set()
    identity_err = 0.0
    trigger_means = []
    n_values = []
    for g in poisoned_graphs:
        entry = entries[g.id]
        region = sorted(entry.node_ids)
        m, n = len(region), g.num_nodes
        sizes.add(m)
        n_values.append(n)
        kept = [v for v in range(n) if v not in set(region)]
        mu_keep = g.features[kept, :].mean(axis=0) if kept else np.zeros(g.features.shape[1])
        mu_trigger = entry.trigger.features.mean(axis=0)
        trigger_means.append(mu_trigger)
        mu_poisoned = g.features.mean(axis=0)
        predicted = (1.0 - m / n) * mu_keep + (m / n) * mu_trigger
        identity_err = max(identity_err, float(np.abs(mu_poisoned - predicted).max()))
    if len(sizes) != 1:
        raise ValueError(f"mixed trigger sizes in ledger: {sorted(sizes)}")
    trigger_size = sizes.pop()

    clean_means = np.stack([g.features.mean(axis=0) for g in clean_graphs])
    poisoned_means = np.stack([g.features.mean(axis=0) for g in poisoned_graphs])
    delta = mean_shift_delta(
        clean_means.mean(axis=0), np.stack(trigger_means).mean(axis=0)
    )
    mean_n = float(np.mean(n_values))
    bound = tv_graph_lower_bound(trigger_size, mean_n, delta)

    combined = np.concatenate([clean_means, poisoned_means])
    coords = _first_principal_coordinate(combined)
    lo, hi = float(coords.min()), float(coords.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)
    clean_coords = coords[: len(clean_means)]
    poisoned_coords = coords[len(clean_means) :]
    tv = tv_distance(
        histogram_distribution(clean_coords, edges),
        histogram_distribution(poisoned_coords, edges),
    )
    return GraphShiftReport(
        empirical_tv=tv,
        predicted_lower_bound=bound,
        delta=delta,
        mean_num_nodes=mean_n,
        trigger_size=trigger_size,
        identity_max_abs_error=identity_err,
        auc_bound=auc_lower_bound(bound),
    )


def random_distribution_pair(
    rng: np.random.Generator, support: int = 10
) -> tuple[FiniteDistribution, FiniteDistribution]:
    """A random pair on a shared support, occasionally with disjoint mass."""
    outcomes = tuple(range(support))

    def draw():
        w = rng.gamma(1.0, 1.0, size=support)
        mask = rng.random(support) < 0.2
        w[mask] = 0.0
        if w.sum() <= 0:
            w[rng.integers(support)] = 1.0
        return w / w.sum()

    return (
        FiniteDistribution(outcomes, draw()),
        FiniteDistribution(outcomes, draw()),
    )
