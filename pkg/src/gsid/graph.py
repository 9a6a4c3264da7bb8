"""Bipartite entity/fact graph construction, features, and dataset files.

Entity nodes stand for physical things (routers, the route reflector,
external ASes, destination networks); fact nodes stand for grounded
predicate instances (links, sessions, advertisements, rules). Edges only run
between the two sides and carry the argument position of the entity within
the predicate as their type. Every node row of the feature matrix follows
the fixed 15-dimensional layout, with -1 marking inapplicable dimensions.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .protocol import BgpConfig, IntentSet, OspfConfig
from .topology import Topology


class GraphError(Exception):
    pass


class GraphConstructionError(GraphError):
    pass


class DatasetError(GraphError):
    pass


class DatasetVersionError(DatasetError):
    pass


FEATURE_DIM = 15

# feature vector layout
DIM_NODE_TYPE = 0
DIM_NODE_INDEX = 1
DIM_PREDICATE = 2
DIM_HOLDS = 3
DIM_LP = 4
DIM_ASL = 5
DIM_MED = 6
RESERVED_BGP_DIMS = (7, 8, 9)  # unnamed BGP route attributes, always -1
DIM_OSPF = 10
DIM_EXTERNAL_AS = 11
DIM_DEST_NETWORK = 12
DIM_ROUTE_REFLECTOR = 13
DIM_ROUTER = 14

ENTITY_KIND_DIMS = {
    "external_as": DIM_EXTERNAL_AS,
    "dest_network": DIM_DEST_NETWORK,
    "route_reflector": DIM_ROUTE_REFLECTOR,
    "router": DIM_ROUTER,
}

PREDICATE_CODES = {
    "BGP_route": 0,
    "connected": 1,
    "eBGP": 2,
    "fwd": 4,
    "iBGP": 5,
    "reachable": 7,
    "trafficIso": 10,
}

PREDICATE_ARITY = {
    "connected": 2,
    "iBGP": 2,
    "eBGP": 2,
    "BGP_route": 2,
    "fwd": 3,
    "reachable": 3,
    "trafficIso": 4,
}

# Monitored parameters in fixed order: (name, feature dim).
MONITORED_PARAMS = (
    ("local_pref", DIM_LP),
    ("as_path_len", DIM_ASL),
    ("med", DIM_MED),
    ("ospf_weight", DIM_OSPF),
)
NUM_MONITORED = len(MONITORED_PARAMS)

TAU_SELF = 4  # self-loop edge type, outside the argument-position types 0..3
EDGE_TYPES = (0, 1, 2, 3, TAU_SELF)


@dataclass(frozen=True)
class EntityNode:
    index: int
    kind: str  # router | route_reflector | external_as | dest_network
    source_id: int


@dataclass(frozen=True)
class FactNode:
    index: int
    predicate: str
    args: tuple[int, ...]  # entity node indices, ordered by argument position
    holds: int
    config: tuple[tuple[int, int], ...] = ()  # (feature dim, value)

    @property
    def code(self) -> int:
        return PREDICATE_CODES[self.predicate]


@dataclass(eq=False)
class BipartiteGraph:
    entities: tuple[EntityNode, ...]
    facts: tuple[FactNode, ...]
    edges: tuple[tuple[int, int, int], ...]  # (entity index, fact index, tau)
    x_star: np.ndarray  # ground-truth features, (|V|, 15)
    x: np.ndarray  # observed features (equal to x_star until injection)
    labels: np.ndarray  # (|V_f|, NUM_MONITORED) in {0,1}
    seed: int
    message_edges: dict[int, tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_facts(self) -> int:
        return len(self.facts)

    @property
    def num_nodes(self) -> int:
        return len(self.entities) + len(self.facts)

    def fact_indices(self) -> np.ndarray:
        return np.arange(self.num_entities, self.num_nodes, dtype=np.int64)

    def validate(self) -> None:
        ne = self.num_entities
        for i, ent in enumerate(self.entities):
            if ent.index != i:
                raise GraphError(f"entity {i} has index {ent.index}")
        for j, fact in enumerate(self.facts):
            if fact.index != ne + j:
                raise GraphError(f"fact {j} has index {fact.index}")
            if len(fact.args) != PREDICATE_ARITY[fact.predicate]:
                raise GraphError(f"{fact.predicate} fact with {len(fact.args)} args")
            if len(fact.args) < 2:
                raise GraphError(f"fact {fact.index} connects fewer than two entities")
        for e_idx, f_idx, tau in self.edges:
            if not (0 <= e_idx < ne):
                raise GraphError(f"edge entity endpoint {e_idx} is not an entity node")
            if not (ne <= f_idx < self.num_nodes):
                raise GraphError(f"edge fact endpoint {f_idx} is not a fact node")
            fact = self.facts[f_idx - ne]
            if tau >= len(fact.args) or fact.args[tau] != e_idx:
                raise GraphError(f"edge type {tau} disagrees with argument position")


def build_graph(
    topology: Topology, bgp: BgpConfig, ospf: OspfConfig, intents: IntentSet
) -> BipartiteGraph:
    """Lower one simulated network into its bipartite graph."""
    entities: list[EntityNode] = []
    index: dict[tuple[str, int], int] = {}

    def add_entity(kind: str, source_id: int) -> None:
        index[("router", source_id) if kind == "route_reflector" else (kind, source_id)] = len(entities)
        entities.append(EntityNode(index=len(entities), kind=kind, source_id=source_id))

    for r in sorted(topology.routers):
        add_entity("route_reflector" if r == topology.route_reflector else "router", r)
    for a in sorted(topology.external_ases):
        add_entity("external_as", a)
    for n, _owner in sorted(topology.dest_networks):
        add_entity("dest_network", n)

    def ent(kind: str, source_id: int) -> int:
        key = (kind, source_id)
        if key not in index:
            raise GraphConstructionError(f"dangling argument: no {kind} with id {source_id}")
        return index[key]

    facts: list[FactNode] = []

    def add_fact(predicate: str, args: tuple[int, ...], holds: int, config=()):
        facts.append(
            FactNode(
                index=len(entities) + len(facts),
                predicate=predicate,
                args=args,
                holds=holds,
                config=tuple(config),
            )
        )

    for u, v in sorted(topology.intra_links):
        add_fact("connected", (ent("router", u), ent("router", v)), 1,
                 [(DIM_OSPF, ospf.weight[(u, v)])])
    rr = ent("router", topology.route_reflector)
    for r in sorted(topology.routers):
        if r == topology.route_reflector:
            continue
        add_fact("iBGP", (ent("router", r), rr), 1)
    for g, a in sorted(topology.ebgp_adjacencies):
        add_fact("eBGP", (ent("router", g), ent("external_as", a)), 1)
    for a, n in sorted(topology.advertised_routes):
        add_fact(
            "BGP_route",
            (ent("external_as", a), ent("dest_network", n)),
            1,
            [(DIM_LP, bgp.local_pref[(a, n)]),
             (DIM_ASL, bgp.as_path_len[(a, n)]),
             (DIM_MED, bgp.med[(a, n)])],
        )
    for r, n, nh, holds in intents.fwd:
        add_fact("fwd", (ent("router", r), ent("dest_network", n), ent("router", nh)), holds)
    for r, n, e, holds in intents.reachable:
        add_fact("reachable", (ent("router", r), ent("dest_network", n), ent("router", e)), holds)
    for r1, r2, n1, n2, holds in intents.traffic_iso:
        add_fact(
            "trafficIso",
            (ent("router", r1), ent("router", r2), ent("dest_network", n1), ent("dest_network", n2)),
            holds,
        )

    edges = tuple(
        (arg, fact.index, tau) for fact in facts for tau, arg in enumerate(fact.args)
    )
    graph = BipartiteGraph(
        entities=tuple(entities),
        facts=tuple(facts),
        edges=edges,
        x_star=np.zeros((0, 0)),
        x=np.zeros((0, 0)),
        labels=np.zeros((len(facts), NUM_MONITORED), dtype=np.int8),
        seed=topology.seed,
    )
    graph.x_star = featurize(graph)
    graph.x = graph.x_star.copy()
    graph.validate()
    return graph


def featurize(graph: BipartiteGraph) -> np.ndarray:
    """The (|V|, 15) feature matrix; every row is re-derivable from its node."""
    x = np.full((graph.num_nodes, FEATURE_DIM), -1.0)
    for ent in graph.entities:
        row = x[ent.index]
        row[DIM_NODE_TYPE] = 0.0
        row[DIM_NODE_INDEX] = float(ent.index)
        row[ENTITY_KIND_DIMS[ent.kind]] = 1.0
    for fact in graph.facts:
        row = x[fact.index]
        row[DIM_NODE_TYPE] = 1.0
        row[DIM_NODE_INDEX] = float(fact.index)
        row[DIM_PREDICATE] = float(fact.code)
        row[DIM_HOLDS] = float(fact.holds)
        for dim, value in fact.config:
            row[dim] = float(value)
    return x


def augment(graph: BipartiteGraph) -> BipartiteGraph:
    """Materialize directed message edges: both directions of every typed
    edge, plus one self-loop per node under the dedicated self type."""
    if graph.message_edges is not None:
        return graph
    by_type: dict[int, tuple[list[int], list[int]]] = {}
    for e_idx, f_idx, tau in graph.edges:
        src, dst = by_type.setdefault(tau, ([], []))
        src.extend((e_idx, f_idx))
        dst.extend((f_idx, e_idx))
    all_nodes = np.arange(graph.num_nodes, dtype=np.int64)
    message_edges = {
        tau: (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))
        for tau, (src, dst) in sorted(by_type.items())
    }
    message_edges[TAU_SELF] = (all_nodes, all_nodes.copy())
    graph.message_edges = message_edges
    return graph


def message_count(graph: BipartiteGraph) -> int:
    g = augment(graph)
    return sum(src.size for src, _ in g.message_edges.values())


def structural_equal(a: BipartiteGraph, b: BipartiteGraph) -> bool:
    return (
        a.entities == b.entities
        and a.facts == b.facts
        and a.edges == b.edges
        and a.seed == b.seed
        and np.array_equal(a.x_star, b.x_star)
        and np.array_equal(a.x, b.x)
        and np.array_equal(a.labels, b.labels)
    )


# ---------------------------------------------------------------------------
# serialization

DATASET_MAGIC = b"GSDS"
DATASET_VERSION = 1


def graph_to_record(graph: BipartiteGraph) -> dict:
    ne = graph.num_entities
    perturbations = []
    diff = np.argwhere(graph.x != graph.x_star)
    for node_idx, dim in diff:
        perturbations.append([int(node_idx - ne), int(dim), float(graph.x[node_idx, dim])])
    return {
        "seed": graph.seed,
        "entities": [[e.kind, e.source_id] for e in graph.entities],
        "facts": [
            [f.predicate, list(f.args), f.holds, [list(c) for c in f.config]]
            for f in graph.facts
        ],
        "perturbations": perturbations,
    }


def graph_from_record(record: dict) -> BipartiteGraph:
    entities = tuple(
        EntityNode(index=i, kind=kind, source_id=sid)
        for i, (kind, sid) in enumerate(record["entities"])
    )
    ne = len(entities)
    facts = tuple(
        FactNode(
            index=ne + j,
            predicate=pred,
            args=tuple(args),
            holds=holds,
            config=tuple((int(d), int(v)) for d, v in config),
        )
        for j, (pred, args, holds, config) in enumerate(record["facts"])
    )
    edges = tuple((arg, fact.index, tau) for fact in facts for tau, arg in enumerate(fact.args))
    graph = BipartiteGraph(
        entities=entities,
        facts=facts,
        edges=edges,
        x_star=np.zeros((0, 0)),
        x=np.zeros((0, 0)),
        labels=np.zeros((len(facts), NUM_MONITORED), dtype=np.int8),
        seed=record["seed"],
    )
    graph.x_star = featurize(graph)
    graph.x = graph.x_star.copy()
    dim_to_param = {dim: k for k, (_name, dim) in enumerate(MONITORED_PARAMS)}
    for fact_local, dim, value in record.get("perturbations", []):
        graph.x[ne + int(fact_local), int(dim)] = float(value)
        graph.labels[int(fact_local), dim_to_param[int(dim)]] = 1
    graph.validate()
    return graph


def _encode_record(record: dict) -> bytes:
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_dataset(graphs: list[BipartiteGraph], path) -> None:
    """Length-prefixed record stream with per-record CRC32 checksums."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(bytes([DATASET_VERSION]))
        fh.write(len(graphs).to_bytes(4, "little"))
        for graph in graphs:
            payload = _encode_record(graph_to_record(graph))
            fh.write(len(payload).to_bytes(4, "little"))
            fh.write(zlib.crc32(payload).to_bytes(4, "little"))
            fh.write(payload)


def read_dataset(path) -> list[BipartiteGraph]:
    with open(path, "rb") as fh:
        header = fh.read(9)
        if len(header) < 9 or header[:4] != DATASET_MAGIC:
            raise DatasetError(f"{path}: not a dataset file (bad magic)")
        version = header[4]
        if version != DATASET_VERSION:
            raise DatasetVersionError(
                f"{path}: format version {version}, reader supports {DATASET_VERSION}"
            )
        count = int.from_bytes(header[5:9], "little")
        graphs: list[BipartiteGraph] = []
        for i in range(count):
            prefix = fh.read(8)
            if len(prefix) < 8:
                raise DatasetError(f"{path}: truncated at record {i}")
            length = int.from_bytes(prefix[:4], "little")
            checksum = int.from_bytes(prefix[4:8], "little")
            payload = fh.read(length)
            if len(payload) < length:
                raise DatasetError(f"{path}: truncated payload in record {i}")
            if zlib.crc32(payload) != checksum:
                raise DatasetError(f"{path}: checksum mismatch in record {i}")
            graphs.append(graph_from_record(json.loads(payload.decode("utf-8"))))
        if fh.read(1):
            raise DatasetError(f"{path}: trailing bytes after {count} records")
    return graphs


def write_jsonl(graphs: list[BipartiteGraph], path) -> None:
    """Human-readable export: one JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for graph in graphs:
            fh.write(json.dumps(graph_to_record(graph), sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> list[BipartiteGraph]:
    graphs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                graphs.append(graph_from_record(json.loads(line)))
    return graphs
