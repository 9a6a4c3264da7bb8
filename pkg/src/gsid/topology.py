"""Random multi-AS topology generation and GraphML ingestion.

A topology is one autonomous system of internal routers (connected intra-AS
graph, one route reflector, a few gateway routers) plus its periphery:
external ASes hanging off the gateways and the destination networks they
advertise. Generation is a pure function of the spec, so identical seeds
yield byte-identical serializations.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class TopologyError(Exception):
    pass


class SpecValidationError(TopologyError):
    pass


class IngestError(TopologyError):
    pass


Range = tuple[int, int]


@dataclass(frozen=True)
class TopologySpec:
    """Inclusive count ranges for one sampled network plus the sample seed."""

    router_range: Range = (16, 23)
    gateway_count_range: Range = (3, 3)
    dest_network_range: Range = (4, 7)
    fwd_query_range: Range = (8, 12)
    reach_query_range: Range = (4, 7)
    iso_query_range: Range = (10, 30)
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "router_range",
            "gateway_count_range",
            "dest_network_range",
            "fwd_query_range",
            "reach_query_range",
            "iso_query_range",
        ):
            lo, hi = getattr(self, name)
            if lo < 1:
                raise SpecValidationError(f"{name} low {lo} must be >= 1")
            if lo > hi:
                raise SpecValidationError(f"{name} low {lo} exceeds high {hi}")
        if self.gateway_count_range[1] > self.router_range[0]:
            raise SpecValidationError(
                f"gateway range {self.gateway_count_range} can exceed router range {self.router_range}"
            )
        if not 0 <= self.seed < 2 ** 64:
            raise SpecValidationError(f"seed {self.seed} outside unsigned 64-bit range")

    def with_seed(self, seed: int) -> "TopologySpec":
        return TopologySpec(
            router_range=self.router_range,
            gateway_count_range=self.gateway_count_range,
            dest_network_range=self.dest_network_range,
            fwd_query_range=self.fwd_query_range,
            reach_query_range=self.reach_query_range,
            iso_query_range=self.iso_query_range,
            seed=int(seed),
        )


# Dataset presets; the real-world preset keeps baseline rule counts but takes
# its router core from an ingested GraphML document.
PRESETS: dict[str, TopologySpec] = {
    "baseline": TopologySpec(
        router_range=(16, 23),
        gateway_count_range=(3, 3),
        dest_network_range=(4, 7),
        fwd_query_range=(8, 12),
        reach_query_range=(4, 7),
        iso_query_range=(10, 30),
    ),
    "larger-scale": TopologySpec(
        router_range=(24, 31),
        gateway_count_range=(7, 9),
        dest_network_range=(10, 15),
        fwd_query_range=(25, 35),
        reach_query_range=(15, 20),
        iso_query_range=(10, 30),
    ),
    "real-world": TopologySpec(
        router_range=(16, 23),
        gateway_count_range=(3, 3),
        dest_network_range=(4, 7),
        fwd_query_range=(8, 12),
        reach_query_range=(4, 7),
        iso_query_range=(10, 30),
    ),
}


@dataclass(frozen=True)
class Topology:
    """One sampled network: internal routers plus the AS periphery."""

    routers: tuple[int, ...]
    route_reflector: int
    gateways: tuple[int, ...]
    external_ases: tuple[int, ...]
    dest_networks: tuple[tuple[int, int], ...]  # (network id, owning external AS)
    intra_links: tuple[tuple[int, int], ...]  # unordered, stored as (low, high)
    ebgp_adjacencies: tuple[tuple[int, int], ...]  # (gateway router, external AS)
    advertised_routes: tuple[tuple[int, int], ...]  # (external AS, network id)
    seed: int
    router_labels: tuple[str, ...] | None = None  # original ids when ingested

    def neighbors(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {r: [] for r in self.routers}
        for u, v in self.intra_links:
            adj[u].append(v)
            adj[v].append(u)
        for r in adj:
            adj[r].sort()
        return adj

    def validate(self) -> None:
        routers = set(self.routers)
        if self.route_reflector not in routers:
            raise TopologyError("route reflector is not a router")
        if not set(self.gateways) <= routers:
            raise TopologyError("gateways must be a subset of routers")
        for u, v in self.intra_links:
            if u == v:
                raise TopologyError(f"self-link on router {u}")
            if u not in routers or v not in routers:
                raise TopologyError(f"link ({u},{v}) references unknown router")
        if not _connected(self.routers, self.intra_links):
            raise TopologyError("intra-AS link graph is not connected")
        adj_by_as: dict[int, int] = {}
        for g, a in self.ebgp_adjacencies:
            if g not in set(self.gateways):
                raise TopologyError(f"eBGP adjacency on non-gateway router {g}")
            adj_by_as[a] = adj_by_as.get(a, 0) + 1
        adverts_by_as: dict[int, int] = {}
        for a, n in self.advertised_routes:
            adverts_by_as[a] = adverts_by_as.get(a, 0) + 1
        for a in self.external_ases:
            if adj_by_as.get(a, 0) < 1:
                raise TopologyError(f"external AS {a} has no eBGP adjacency")
            if adverts_by_as.get(a, 0) < 1:
                raise TopologyError(f"external AS {a} advertises no network")

    def to_json_dict(self) -> dict:
        return {
            "routers": list(self.routers),
            "route_reflector": self.route_reflector,
            "gateways": list(self.gateways),
            "external_ases": list(self.external_ases),
            "dest_networks": [list(p) for p in self.dest_networks],
            "intra_links": [list(p) for p in self.intra_links],
            "ebgp_adjacencies": [list(p) for p in self.ebgp_adjacencies],
            "advertised_routes": [list(p) for p in self.advertised_routes],
            "seed": self.seed,
            "router_labels": list(self.router_labels) if self.router_labels else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Topology":
        return cls(
            routers=tuple(d["routers"]),
            route_reflector=d["route_reflector"],
            gateways=tuple(d["gateways"]),
            external_ases=tuple(d["external_ases"]),
            dest_networks=tuple(tuple(p) for p in d["dest_networks"]),
            intra_links=tuple(tuple(p) for p in d["intra_links"]),
            ebgp_adjacencies=tuple(tuple(p) for p in d["ebgp_adjacencies"]),
            advertised_routes=tuple(tuple(p) for p in d["advertised_routes"]),
            seed=d["seed"],
            router_labels=tuple(d["router_labels"]) if d.get("router_labels") else None,
        )


def _connected(routers: tuple[int, ...], links) -> bool:
    if not routers:
        return False
    adj: dict[int, list[int]] = {r: [] for r in routers}
    for u, v in links:
        adj[u].append(v)
        adj[v].append(u)
    seen = {routers[0]}
    queue = deque([routers[0]])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(routers)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def _random_intra_links(rng: np.random.Generator, num_routers: int) -> list[tuple[int, int]]:
    """Random spanning tree plus extra links until average degree is about 3."""
    links: set[tuple[int, int]] = set()
    order = rng.permutation(num_routers)
    for i in range(1, num_routers):
        u = int(order[i])
        v = int(order[rng.integers(0, i)])
        links.add((min(u, v), max(u, v)))
    target = max(num_routers - 1, int(round(1.5 * num_routers)))
    max_possible = num_routers * (num_routers - 1) // 2
    target = min(target, max_possible)
    while len(links) < target:
        u = int(rng.integers(0, num_routers))
        v = int(rng.integers(0, num_routers))
        if u != v:
            links.add((min(u, v), max(u, v)))
    return sorted(links)


def _attach_periphery(
    rng: np.random.Generator,
    num_routers: int,
    spec: TopologySpec,
) -> dict:
    """Draw gateways, the route reflector, external ASes and networks."""
    gw_lo, gw_hi = spec.gateway_count_range
    if gw_hi > num_routers:
        raise SpecValidationError(
            f"gateway range {spec.gateway_count_range} exceeds {num_routers} routers"
        )
    num_gateways = int(rng.integers(gw_lo, gw_hi + 1))
    gateways = sorted(int(r) for r in rng.choice(num_routers, size=num_gateways, replace=False))
    non_gateways = [r for r in range(num_routers) if r not in set(gateways)]
    pool = non_gateways if non_gateways else list(range(num_routers))
    route_reflector = int(pool[int(rng.integers(0, len(pool)))])

    # One external AS per gateway; each network is hosted by one AS but,
    # through external transit, advertised by (and thus reachable via) all of
    # them, which is what gives BGP selection more than one candidate.
    external_ases = tuple(range(num_gateways))
    ebgp_adjacencies = tuple((gateways[i], i) for i in range(num_gateways))
    num_networks = int(rng.integers(spec.dest_network_range[0], spec.dest_network_range[1] + 1))
    dest_networks = tuple((n, int(rng.integers(0, num_gateways))) for n in range(num_networks))
    advertised_routes = tuple((a, n) for a in external_ases for n in range(num_networks))
    return {
        "gateways": tuple(gateways),
        "route_reflector": route_reflector,
        "external_ases": external_ases,
        "ebgp_adjacencies": ebgp_adjacencies,
        "dest_networks": dest_networks,
        "advertised_routes": advertised_routes,
    }


def generate_topology(spec: TopologySpec) -> Topology:
    spec.validate()
    rng = _rng(spec.seed, 0)
    num_routers = int(rng.integers(spec.router_range[0], spec.router_range[1] + 1))
    links = _random_intra_links(rng, num_routers)
    periphery = _attach_periphery(rng, num_routers, spec)
    topo = Topology(
        routers=tuple(range(num_routers)),
        intra_links=tuple(links),
        seed=spec.seed,
        **periphery,
    )
    topo.validate()
    return topo


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def ingest_graphml(document: bytes, spec: TopologySpec) -> Topology:
    """Build a Topology whose router core comes from a GraphML document.

    Only ``node`` and ``edge`` elements are consulted; node ids are taken
    verbatim and mapped to dense router indices in document order. Gateways,
    the route reflector and the AS periphery are attached with the spec seed,
    exactly as for synthetic topologies.
    """
    spec.validate()
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise IngestError(f"malformed GraphML: {exc}") from exc

    node_ids: list[str] = []
    index: dict[str, int] = {}
    edges: set[tuple[int, int]] = set()
    for elem in root.iter():
        name = _local_name(elem.tag)
        if name == "node":
            nid = elem.get("id")
            if nid is None:
                raise IngestError("node element without id attribute")
            if nid not in index:
                index[nid] = len(node_ids)
                node_ids.append(nid)
        elif name == "edge":
            src, tgt = elem.get("source"), elem.get("target")
            if src is None or tgt is None:
                raise IngestError("edge element missing source/target")
            if src not in index or tgt not in index:
                raise IngestError(f"edge ({src},{tgt}) references undeclared node")
            u, v = index[src], index[tgt]
            if u == v:
                continue  # physical self-loops carry no routing information
            edges.add((min(u, v), max(u, v)))

    if not node_ids:
        raise IngestError("document declares no nodes")
    num_routers = len(node_ids)
    links = sorted(edges)
    if not _connected(tuple(range(num_routers)), links):
        raise IngestError("ingested graph is not connected")

    rng = _rng(spec.seed, 0)
    periphery = _attach_periphery(rng, num_routers, spec)
    topo = Topology(
        routers=tuple(range(num_routers)),
        intra_links=tuple(links),
        seed=spec.seed,
        router_labels=tuple(node_ids),
        **periphery,
    )
    topo.validate()
    return topo
