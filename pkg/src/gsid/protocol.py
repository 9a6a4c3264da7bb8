"""Ground-truth BGP/OSPF configuration synthesis and the routing it induces.

Configuration values are small non-negative integers drawn uniformly from
fixed inclusive ranges. Routing follows the protocols' comparison semantics:
OSPF runs Dijkstra per router over the configured link weights; BGP picks an
exit per destination by lexicographic comparison of (local preference desc,
AS-path length asc, MED asc) over the advertisements, with the lowest
gateway id breaking exact ties. The route reflector redistributes the winner
to every internal router, so the exit is shared and only the OSPF path to it
differs per source.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .topology import Topology, TopologySpec


class ProtocolError(Exception):
    pass


class RoutingError(ProtocolError):
    pass


class SelectionError(ProtocolError):
    pass


class InsufficientIntentsError(ProtocolError):
    """Raised when the realized routing cannot supply the drawn rule counts."""


@dataclass(frozen=True)
class ParamRanges:
    """Inclusive value ranges for the four monitored parameters."""

    local_pref: tuple[int, int] = (0, 9)
    as_path_len: tuple[int, int] = (1, 9)
    med: tuple[int, int] = (0, 9)
    ospf_weight: tuple[int, int] = (1, 9)

    def validate(self) -> None:
        for name in ("local_pref", "as_path_len", "med", "ospf_weight"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ProtocolError(f"invalid range for {name}: ({lo},{hi})")

    def as_dict(self) -> dict[str, tuple[int, int]]:
        return {
            "local_pref": self.local_pref,
            "as_path_len": self.as_path_len,
            "med": self.med,
            "ospf_weight": self.ospf_weight,
        }


DEFAULT_RANGES = ParamRanges()

Advert = tuple[int, int]  # (external AS, network id)


@dataclass(frozen=True)
class BgpConfig:
    """Per-advertisement BGP attributes, keyed by (external AS, network)."""

    local_pref: dict[Advert, int]
    as_path_len: dict[Advert, int]
    med: dict[Advert, int]


@dataclass(frozen=True)
class OspfConfig:
    """Per-link OSPF weights, keyed by the (low, high) router pair."""

    weight: dict[tuple[int, int], int]

    def link_weight(self, u: int, v: int) -> int:
        return self.weight[(min(u, v), max(u, v))]


@dataclass(frozen=True)
class RoutingState:
    ospf_cost: dict[tuple[int, int], int]
    ospf_next_hop: dict[tuple[int, int], int]
    exit_point: dict[tuple[int, int], int]  # (router, network) -> gateway
    forward_path: dict[tuple[int, int], tuple[int, ...]]  # router path ending at the exit


@dataclass(frozen=True)
class IntentSet:
    """Preset rules sampled from realized routing; holds is 1 by construction."""

    fwd: tuple[tuple[int, int, int, int], ...]  # (src, network, next hop, holds)
    reachable: tuple[tuple[int, int, int, int], ...]  # (src, network, exit, holds)
    traffic_iso: tuple[tuple[int, int, int, int, int], ...]  # (r1, r2, n1, n2, holds)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def synthesize_config(
    topology: Topology, ranges: ParamRanges = DEFAULT_RANGES
) -> tuple[BgpConfig, OspfConfig]:
    """Uniform in-range values for every advertisement attribute and link weight."""
    ranges.validate()
    rng = _rng(topology.seed, 1)

    def draw(bounds: tuple[int, int]) -> int:
        return int(rng.integers(bounds[0], bounds[1] + 1))

    local_pref: dict[Advert, int] = {}
    as_path_len: dict[Advert, int] = {}
    med: dict[Advert, int] = {}
    for advert in topology.advertised_routes:
        local_pref[advert] = draw(ranges.local_pref)
        as_path_len[advert] = draw(ranges.as_path_len)
        med[advert] = draw(ranges.med)
    weight = {link: draw(ranges.ospf_weight) for link in topology.intra_links}
    return BgpConfig(local_pref, as_path_len, med), OspfConfig(weight)


def _dijkstra(source: int, adj: dict[int, list[int]], ospf: OspfConfig) -> dict[int, int]:
    dist = {source: 0}
    heap: list[tuple[int, int]] = [(0, source)]
    done: set[int] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for nb in adj[node]:
            nd = d + ospf.link_weight(node, nb)
            if nb not in dist or nd < dist[nb]:
                dist[nb] = nd
                heapq.heappush(heap, (nd, nb))
    return dist


def compute_ospf_routes(topology: Topology, ospf: OspfConfig) -> RoutingState:
    """All-pairs shortest-path costs and hop-by-hop next hops.

    Each router forwards to the neighbor minimizing link weight plus the
    neighbor's distance to the target, ties broken by lowest neighbor id, so
    per-router independent decisions compose into consistent simple paths.
    """
    for link in topology.intra_links:
        if link not in ospf.weight:
            raise RoutingError(f"link {link} has no OSPF weight")
    adj = topology.neighbors()
    dist_from: dict[int, dict[int, int]] = {r: _dijkstra(r, adj, ospf) for r in topology.routers}

    cost: dict[tuple[int, int], int] = {}
    next_hop: dict[tuple[int, int], int] = {}
    for s in topology.routers:
        for t in topology.routers:
            if t not in dist_from[s]:
                raise RoutingError(f"router pair ({s},{t}) is unreachable")
            cost[(s, t)] = dist_from[s][t]
            if s == t:
                continue
            best = None
            for nb in adj[s]:
                via = ospf.link_weight(s, nb) + dist_from[nb][t]
                if via == cost[(s, t)] and (best is None or nb < best):
                    best = nb
            assert best is not None
            next_hop[(s, t)] = best
    return RoutingState(ospf_cost=cost, ospf_next_hop=next_hop, exit_point={}, forward_path={})


def bgp_select_route(candidates: list[tuple[int, int, int, int]]) -> int:
    """Best gateway among (gateway, LP, ASL, MED) tuples.

    Highest local preference wins, then shortest AS path, then lowest MED,
    then lowest gateway id.
    """
    if not candidates:
        raise SelectionError("empty candidate list")
    return min(candidates, key=lambda c: (-c[1], c[2], c[3], c[0]))[0]


def _ospf_path(state: RoutingState, src: int, dst: int) -> tuple[int, ...]:
    path = [src]
    node = src
    while node != dst:
        node = state.ospf_next_hop[(node, dst)]
        path.append(node)
        if len(path) > len(state.ospf_cost):
            raise RoutingError(f"next-hop loop between {src} and {dst}")
    return tuple(path)


def simulate_routing(topology: Topology, bgp: BgpConfig, ospf: OspfConfig) -> RoutingState:
    """Exit selection per destination plus OSPF forward paths toward it."""
    base = compute_ospf_routes(topology, ospf)
    gateway_of = {a: g for g, a in topology.ebgp_adjacencies}
    adverts_by_net: dict[int, list[Advert]] = {}
    for a, n in topology.advertised_routes:
        adverts_by_net.setdefault(n, []).append((a, n))

    exit_point: dict[tuple[int, int], int] = {}
    forward_path: dict[tuple[int, int], tuple[int, ...]] = {}
    for net, _owner in topology.dest_networks:
        adverts = adverts_by_net.get(net, [])
        candidates = [
            (gateway_of[a], bgp.local_pref[(a, n)], bgp.as_path_len[(a, n)], bgp.med[(a, n)])
            for a, n in adverts
            if a in gateway_of
        ]
        if not candidates:
            raise RoutingError(f"network {net} has no advertising gateway")
        exit_gw = bgp_select_route(candidates)
        for r in topology.routers:
            exit_point[(r, net)] = exit_gw
            forward_path[(r, net)] = _ospf_path(base, r, exit_gw)
    return RoutingState(
        ospf_cost=base.ospf_cost,
        ospf_next_hop=base.ospf_next_hop,
        exit_point=exit_point,
        forward_path=forward_path,
    )


def derive_intents(topology: Topology, state: RoutingState, spec: TopologySpec) -> IntentSet:
    """Sample forwarding, reachability and isolation rules that hold as realized."""
    rng = _rng(topology.seed, 2)
    nets = [n for n, _ in topology.dest_networks]

    fwd_pool: list[tuple[int, int, int]] = []
    reach_pool: list[tuple[int, int, int]] = []
    for r in topology.routers:
        for n in nets:
            exit_gw = state.exit_point[(r, n)]
            reach_pool.append((r, n, exit_gw))
            if r != exit_gw:
                fwd_pool.append((r, n, state.ospf_next_hop[(r, exit_gw)]))

    path_sets = {key: frozenset(path) for key, path in state.forward_path.items()}
    iso_pool: list[tuple[int, int, int, int]] = []
    keys = sorted(state.forward_path)
    for i, (r1, n1) in enumerate(keys):
        for r2, n2 in keys[i + 1:]:
            if r1 == r2 or n1 == n2:
                continue
            if path_sets[(r1, n1)].isdisjoint(path_sets[(r2, n2)]):
                iso_pool.append((r1, r2, n1, n2))

    def sample(pool: list, bounds: tuple[int, int], kind: str) -> list:
        count = int(rng.integers(bounds[0], bounds[1] + 1))
        if len(pool) < count:
            raise InsufficientIntentsError(
                f"only {len(pool)} realizable {kind} rules, need {count}"
            )
        idx = rng.choice(len(pool), size=count, replace=False)
        return [pool[int(i)] for i in idx]

    fwd = tuple((r, n, nh, 1) for r, n, nh in sample(fwd_pool, spec.fwd_query_range, "fwd"))
    reach = tuple((r, n, e, 1) for r, n, e in sample(reach_pool, spec.reach_query_range, "reachable"))
    iso = tuple(
        (r1, r2, n1, n2, 1)
        for r1, r2, n1, n2 in sample(iso_pool, spec.iso_query_range, "trafficIso")
    )
    return IntentSet(fwd=fwd, reachable=reach, traffic_iso=iso)


MAX_SAMPLE_RETRIES = 32


def sample_network(spec: TopologySpec, ranges: ParamRanges = DEFAULT_RANGES):
    """Generate (topology, bgp, ospf, intents), retrying seeds that cannot
    supply the drawn intent counts."""
    from .topology import generate_topology

    seed = spec.seed
    for attempt in range(MAX_SAMPLE_RETRIES):
        trial = spec.with_seed(seed + attempt * 0x9E3779B9)
        topology = generate_topology(trial)
        bgp, ospf = synthesize_config(topology, ranges)
        state = simulate_routing(topology, bgp, ospf)
        try:
            intents = derive_intents(topology, state, trial)
        except InsufficientIntentsError:
            continue
        return topology, bgp, ospf, intents
    raise InsufficientIntentsError(
        f"no feasible sample after {MAX_SAMPLE_RETRIES} retries from seed {spec.seed}"
    )
