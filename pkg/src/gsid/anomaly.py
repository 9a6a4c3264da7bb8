"""In-range configuration anomaly injection with ground-truth labels.

For each monitored parameter, a fixed fraction of the fact nodes carrying
that parameter is chosen and the stored value replaced by a different value
drawn uniformly from the same protocol-defined range. Labels mark exactly
the entries where the observed value deviates from ground truth; dimensions
that do not apply to a node are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MONITORED_PARAMS, NUM_MONITORED, BipartiteGraph
from .protocol import DEFAULT_RANGES, ParamRanges


class InjectionError(Exception):
    pass


def round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


@dataclass(frozen=True)
class InjectionSpec:
    rate: float = 0.4
    ranges: ParamRanges = DEFAULT_RANGES
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise InjectionError(f"rate {self.rate} outside [0,1]")
        self.ranges.validate()


@dataclass
class LabeledSample:
    """Observed features next to ground truth, with per-entry anomaly labels."""

    graph: BipartiteGraph
    x_hat: np.ndarray  # (|V|, 15) observed features
    labels: np.ndarray  # (|V_f|, NUM_MONITORED) in {0,1}
    eligibility: np.ndarray  # (|V_f|, NUM_MONITORED) bool

    @property
    def x_star(self) -> np.ndarray:
        return self.graph.x_star

    def observed_graph(self) -> BipartiteGraph:
        """A copy of the underlying graph carrying the injected features."""
        g = self.graph
        out = BipartiteGraph(
            entities=g.entities,
            facts=g.facts,
            edges=g.edges,
            x_star=g.x_star.copy(),
            x=self.x_hat.copy(),
            labels=self.labels.copy(),
            seed=g.seed,
            message_edges=g.message_edges,
        )
        return out


def eligibility_mask(graph: BipartiteGraph) -> np.ndarray:
    """(|V_f|, C) boolean mask: which fact nodes carry which parameters."""
    fact_rows = graph.x_star[graph.num_entities:]
    mask = np.zeros((graph.num_facts, NUM_MONITORED), dtype=bool)
    for k, (_name, dim) in enumerate(MONITORED_PARAMS):
        mask[:, k] = fact_rows[:, dim] != -1
    return mask


def inject(graph: BipartiteGraph, spec: InjectionSpec) -> LabeledSample:
    """Perturb round(rate * |eligible|) eligible fact nodes per parameter."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 3])))
    ne = graph.num_entities
    x_hat = graph.x_star.copy()
    eligible = eligibility_mask(graph)
    bounds = spec.ranges.as_dict()

    for k, (name, dim) in enumerate(MONITORED_PARAMS):
        lo, hi = bounds[name]
        candidates = np.flatnonzero(eligible[:, k])
        count = round_half_up(spec.rate * candidates.size)
        if count == 0:
            continue
        if hi == lo:
            raise InjectionError(f"singleton range for {name}: no distinct replacement exists")
        chosen = rng.choice(candidates, size=count, replace=False)
        for fact_local in chosen:
            node = ne + int(fact_local)
            original = int(graph.x_star[node, dim])
            draw = int(rng.integers(lo, hi))  # range size - 1 values
            value = draw + 1 if draw >= original else draw
            x_hat[node, dim] = float(value)

    labels = np.zeros((graph.num_facts, NUM_MONITORED), dtype=np.int8)
    for k, (_name, dim) in enumerate(MONITORED_PARAMS):
        diff = x_hat[ne:, dim] != graph.x_star[ne:, dim]
        labels[:, k] = (diff & eligible[:, k]).astype(np.int8)
    return LabeledSample(graph=graph, x_hat=x_hat, labels=labels, eligibility=eligible)
