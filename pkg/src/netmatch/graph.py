"""Typed directed circuit graphs and the hop-distance utilities built on them.

Node types::

    0 vdd   1 gnd   2 net   3 PMOS   4 NMOS   5 capacitor   6 resistor   7 inductor

Edge types 0..13 run net -> cell and name the terminal (PMOS drain/gate/
source/base, NMOS drain/gate/source/base, C+/C-, R+/R-, L+/L-). The
matching cell -> net edge carries the same code plus 14. A terminal tied
to a supply rail (vdd or gnd) produces only the rail -> cell edge.

Hop distances ignore edge direction, but a rail node is never used as a
stepping stone: a search may end on a rail or start from one, but never
passes through one. Without that rule every transistor would sit two hops
from every other through vdd, and K-hop regions would stop being local.
The rule is safe for the embedding extraction because rails have no
incoming edges, so no message ever travels through a rail either.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .netlist import Netlist

VDD, GND, NET, PMOS, NMOS, CAPACITOR, RESISTOR, INDUCTOR = range(8)
NODE_TYPE_NAMES = ("vdd", "gnd", "net", "PMOS", "NMOS", "capacitor", "resistor", "inductor")
NUM_NODE_TYPES = 8
NUM_RELATIONS = 28
REVERSE_OFFSET = 14
RAIL_TYPES = (VDD, GND)

EDGE_TYPE_NAMES = (
    "PMOS-drain", "PMOS-gate", "PMOS-source", "PMOS-base",
    "NMOS-drain", "NMOS-gate", "NMOS-source", "NMOS-base",
    "C+", "C-", "R+", "R-", "L+", "L-",
)
_KIND_NODE_TYPE = {"PMOS": PMOS, "NMOS": NMOS, "capacitor": CAPACITOR, "resistor": RESISTOR, "inductor": INDUCTOR}
_KIND_EDGE_BASE = {"PMOS": 0, "NMOS": 4, "capacitor": 8, "resistor": 10, "inductor": 12}
_ROLE_OFFSET = {"drain": 0, "gate": 1, "source": 2, "base": 3, "+": 0, "-": 1}

DEFAULT_VDD_ALIASES = ("vdd",)
DEFAULT_GND_ALIASES = ("gnd", "vss")

_MAGIC = b"NMGRAPH\x00"
_VERSION = 1


class CircuitGraph:
    """Immutable typed multigraph with CSR adjacency in both directions.

    ``origin`` is set on graphs produced by :func:`induced_subgraph` and maps
    each local node id to its id in the parent graph.
    """

    def __init__(self, node_types, src, dst, etype, names=None, origin=None):
        self.node_types = np.asarray(node_types, dtype=np.int64)
        n = len(self.node_types)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        etype = np.asarray(etype, dtype=np.int64)
        # canonical edge order: by destination, then relation, then source
        order = np.lexsort((src, etype, dst))
        self.src, self.dst, self.etype = src[order], dst[order], etype[order]
        for arr in (self.src, self.dst, self.etype):
            arr.setflags(write=False)
        self.node_types.setflags(write=False)
        if len(self.src) and (self.src.max() >= n or self.dst.max() >= n or min(self.src.min(), self.dst.min()) < 0):
            raise ValueError("edge endpoint out of range")
        self.names = list(names) if names is not None else [str(i) for i in range(n)]
        self.origin = None if origin is None else np.asarray(origin, dtype=np.int64)

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def __len__(self) -> int:
        return self.num_nodes

    def __repr__(self) -> str:
        return f"CircuitGraph(nodes={self.num_nodes}, edges={self.num_edges})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, CircuitGraph):
            return NotImplemented
        return (
            np.array_equal(self.node_types, other.node_types)
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.etype, other.etype)
        )

    __hash__ = None

    @cached_property
    def features(self) -> np.ndarray:
        """One-hot node-type matrix, shape (n, 8)."""
        x = np.zeros((self.num_nodes, NUM_NODE_TYPES))
        x[np.arange(self.num_nodes), self.node_types] = 1.0
        x.setflags(write=False)
        return x

    @cached_property
    def is_rail(self) -> np.ndarray:
        return np.isin(self.node_types, RAIL_TYPES)

    @cached_property
    def in_adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_nodes)]
        for s, d, r in zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist()):
            adj[d].append((s, r))
        return adj

    @cached_property
    def out_adjacency(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_nodes)]
        order = np.lexsort((self.dst, self.etype, self.src))
        for s, d, r in zip(self.src[order].tolist(), self.dst[order].tolist(), self.etype[order].tolist()):
            adj[s].append((d, r))
        return adj

    @cached_property
    def succ(self) -> list[dict[int, frozenset[int]]]:
        """``succ[u][v]`` = set of edge types on u -> v."""
        out: list[dict[int, set[int]]] = [{} for _ in range(self.num_nodes)]
        for s, d, r in zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist()):
            out[s].setdefault(d, set()).add(r)
        return [{k: frozenset(v) for k, v in m.items()} for m in out]

    @cached_property
    def pred(self) -> list[dict[int, frozenset[int]]]:
        out: list[dict[int, set[int]]] = [{} for _ in range(self.num_nodes)]
        for s, d, r in zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist()):
            out[d].setdefault(s, set()).add(r)
        return [{k: frozenset(v) for k, v in m.items()} for m in out]

    @cached_property
    def neighbors(self) -> list[list[int]]:
        """Sorted undirected neighbor lists (each neighbor once)."""
        nb: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for s, d in zip(self.src.tolist(), self.dst.tolist()):
            nb[s].add(d)
            nb[d].add(s)
        return [sorted(x) for x in nb]

    @cached_property
    def degree_signature(self) -> np.ndarray:
        """Per node: counts of out-edges per type (cols 0..27) and in-edges per type (cols 28..55)."""
        sig = np.zeros((self.num_nodes, 2 * NUM_RELATIONS), dtype=np.int64)
        np.add.at(sig, (self.src, self.etype), 1)
        np.add.at(sig, (self.dst, self.etype + NUM_RELATIONS), 1)
        return sig

    def type_counts(self) -> np.ndarray:
        return np.bincount(self.node_types, minlength=NUM_NODE_TYPES)

    def validate(self) -> None:
        """Raise ValueError if any structural invariant of the encoding is broken."""
        t = self.node_types
        if np.any((t < 0) | (t >= NUM_NODE_TYPES)):
            raise ValueError("node type out of range")
        if np.any((self.etype < 0) | (self.etype >= NUM_RELATIONS)):
            raise ValueError("edge type out of range")
        is_cell = t >= PMOS
        fwd = self.etype < REVERSE_OFFSET
        if not np.all(is_cell[self.dst[fwd]] & ~is_cell[self.src[fwd]]):
            raise ValueError("edge types 0..13 must run net -> cell")
        if not np.all(is_cell[self.src[~fwd]] & ~is_cell[self.dst[~fwd]]):
            raise ValueError("edge types 14..27 must run cell -> net")
        if np.any(self.is_rail[self.dst]):
            raise ValueError("rail nodes must not have incoming edges")
        edges = set(zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist()))
        for s, d, r in edges:
            if r < REVERSE_OFFSET and not self.is_rail[s] and (d, s, r + REVERSE_OFFSET) not in edges:
                raise ValueError(f"missing reverse edge for {s}->{d} type {r}")
            if r >= REVERSE_OFFSET and (d, s, r - REVERSE_OFFSET) not in edges:
                raise ValueError(f"missing forward edge for {s}->{d} type {r}")
        sig = self.degree_signature
        fwd_in = sig[:, NUM_RELATIONS:NUM_RELATIONS + REVERSE_OFFSET].sum(axis=1)
        for kind, expected in ((PMOS, 4), (NMOS, 4), (CAPACITOR, 2), (RESISTOR, 2), (INDUCTOR, 2)):
            if np.any(fwd_in[t == kind] != expected):
                raise ValueError(f"{NODE_TYPE_NAMES[kind]} nodes need {expected} terminal relations")

    # -- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        """Versioned little-endian binary dump (layout documented in README)."""
        n, m = self.num_nodes, self.num_edges
        order = np.lexsort((self.dst, self.etype, self.src))
        offsets = np.zeros(n + 1, dtype="<u4")
        np.cumsum(np.bincount(self.src, minlength=n), out=offsets[1:])
        names = json.dumps(self.names).encode("utf-8")
        return b"".join([
            _MAGIC,
            struct.pack("<III", _VERSION, n, m),
            self.node_types.astype("<u1").tobytes(),
            offsets.tobytes(),
            self.dst[order].astype("<u4").tobytes(),
            self.etype[order].astype("<u1").tobytes(),
            struct.pack("<I", len(names)),
            names,
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "CircuitGraph":
        if data[:8] != _MAGIC:
            raise ValueError("not a circuit graph dump")
        version, n, m = struct.unpack_from("<III", data, 8)
        if version != _VERSION:
            raise ValueError(f"unsupported graph dump version {version}")
        pos = 20
        types = np.frombuffer(data, "<u1", n, pos); pos += n
        offsets = np.frombuffer(data, "<u4", n + 1, pos); pos += 4 * (n + 1)
        dst = np.frombuffer(data, "<u4", m, pos); pos += 4 * m
        etype = np.frombuffer(data, "<u1", m, pos); pos += m
        (name_len,) = struct.unpack_from("<I", data, pos); pos += 4
        names = json.loads(data[pos:pos + name_len].decode("utf-8"))
        src = np.repeat(np.arange(n), np.diff(offsets.astype(np.int64)))
        return cls(types, src, dst, etype, names)

    def to_json(self) -> dict:
        return {
            "version": _VERSION,
            "nodes": [
                {"id": i, "type": int(t), "type_name": NODE_TYPE_NAMES[t], "name": nm}
                for i, (t, nm) in enumerate(zip(self.node_types.tolist(), self.names))
            ],
            "edges": [
                {"src": s, "dst": d, "type": r}
                for s, d, r in zip(self.src.tolist(), self.dst.tolist(), self.etype.tolist())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CircuitGraph":
        nodes = obj["nodes"]
        edges = obj["edges"]
        return cls(
            [nd["type"] for nd in nodes],
            [e["src"] for e in edges],
            [e["dst"] for e in edges],
            [e["type"] for e in edges],
            [nd.get("name", str(nd["id"])) for nd in nodes],
        )


def net_type(name: str, vdd_aliases=DEFAULT_VDD_ALIASES, gnd_aliases=DEFAULT_GND_ALIASES) -> int:
    low = name.casefold()
    if low in {a.casefold() for a in vdd_aliases}:
        return VDD
    if low in {a.casefold() for a in gnd_aliases}:
        return GND
    return NET


def to_graph(n: Netlist, vdd_aliases=DEFAULT_VDD_ALIASES, gnd_aliases=DEFAULT_GND_ALIASES) -> CircuitGraph:
    """Encode a flat netlist: one node per cell (first) and per net (after)."""
    if not n.is_flat:
        raise ValueError("to_graph needs a flattened netlist")
    nets = n.nets
    net_index = {name: len(n.cells) + i for i, name in enumerate(nets)}
    types = [_KIND_NODE_TYPE[c.kind] for c in n.cells]
    types += [net_type(x, vdd_aliases, gnd_aliases) for x in nets]
    src, dst, et = [], [], []
    for ci, cell in enumerate(n.cells):
        base = _KIND_EDGE_BASE[cell.kind]
        for role, net in cell.terminals:
            if net not in net_index:
                raise ValueError(f"{cell.id}: terminal bound to unknown net {net!r}")
            ni = net_index[net]
            r = base + _ROLE_OFFSET[role]
            src.append(ni); dst.append(ci); et.append(r)
            if types[ni] not in RAIL_TYPES:
                src.append(ci); dst.append(ni); et.append(r + REVERSE_OFFSET)
    names = [c.id for c in n.cells] + nets
    return CircuitGraph(types, src, dst, et, names)


def bfs_distances(g: CircuitGraph, src: int, max_hops: int | None = None,
                  through_rails: bool = False) -> dict[int, int]:
    """Hop distances from ``src`` to every node reached within ``max_hops``."""
    if not 0 <= src < g.num_nodes:
        raise IndexError(f"node {src} out of range")
    nb = g.neighbors
    rail = g.is_rail
    dist = {src: 0}
    frontier = deque([src])
    while frontier:
        u = frontier.popleft()
        du = dist[u]
        if max_hops is not None and du >= max_hops:
            continue
        if u != src and rail[u] and not through_rails:
            continue
        for v in nb[u]:
            if v not in dist:
                dist[v] = du + 1
                frontier.append(v)
    return dist


def undirected_distance(g: CircuitGraph, src: int, through_rails: bool = False) -> np.ndarray:
    """Distance from ``src`` to every node as a float array, ``inf`` where unreachable."""
    out = np.full(g.num_nodes, np.inf)
    d = bfs_distances(g, src, through_rails=through_rails)
    out[list(d)] = list(d.values())
    return out


def eccentricities(g: CircuitGraph, through_rails: bool = False) -> np.ndarray:
    return np.array([undirected_distance(g, v, through_rails).max() for v in range(g.num_nodes)])


def radius(g: CircuitGraph, through_rails: bool = False, method: str = "signal") -> int:
    """Minimum eccentricity over non-rail nodes (default), over all nodes
    (``"eccentricity"``) or ``ceil(diameter / 2)`` (``"half_diameter"``).

    Rails never relay paths, so their own eccentricity is tiny; a rail-centred
    K would cover only the rails themselves.
    """
    if g.num_nodes == 0:
        raise ValueError("radius of an empty graph")
    ecc = eccentricities(g, through_rails)
    if np.isinf(ecc).any():
        raise ValueError("graph is disconnected")
    if method == "signal":
        core = ecc[~g.is_rail]
        return int((core if len(core) else ecc).min())
    if method == "eccentricity":
        return int(ecc.min())
    if method == "half_diameter":
        return int(-(-int(ecc.max()) // 2))
    raise ValueError(f"unknown radius method {method!r}")


def diameter(g: CircuitGraph, through_rails: bool = False) -> int:
    ecc = eccentricities(g, through_rails)
    if np.isinf(ecc).any():
        raise ValueError("graph is disconnected")
    return int(ecc.max())


@dataclass(frozen=True)
class KHopRegion:
    center: int
    K: int
    node_sets: tuple[np.ndarray, ...]

    @property
    def L(self) -> int:
        return len(self.node_sets) - 1

    @property
    def nodes(self) -> np.ndarray:
        return self.node_sets[0]


def region_from_distances(center: int, K: int, L: int, dist: dict[int, int]) -> KHopRegion:
    nodes = np.fromiter(dist.keys(), dtype=np.int64, count=len(dist))
    hops = np.fromiter(dist.values(), dtype=np.int64, count=len(dist))
    order = np.argsort(nodes)
    nodes, hops = nodes[order], hops[order]
    sets = tuple(nodes[hops <= K - l] for l in range(L + 1))
    return KHopRegion(center, K, sets)


def khop_region(g: CircuitGraph, center: int, K: int, L: int, through_rails: bool = False) -> KHopRegion:
    """Node sets within ``K - l`` hops of ``center`` for l = 0..L (empty when K - l < 0)."""
    if L < 0 or K < 0:
        raise ValueError("K and L must be non-negative")
    dist = bfs_distances(g, center, K, through_rails)
    return region_from_distances(center, K, L, dist)


def induced_subgraph(g: CircuitGraph, nodes) -> CircuitGraph:
    """Subgraph on ``nodes`` keeping every edge with both ends inside.

    Local ids follow ascending parent id; ``result.origin[local] == parent``.
    """
    keep = np.unique(np.asarray(nodes, dtype=np.int64))
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    mask = (remap[g.src] >= 0) & (remap[g.dst] >= 0)
    return CircuitGraph(
        g.node_types[keep], remap[g.src[mask]], remap[g.dst[mask]], g.etype[mask],
        [g.names[i] for i in keep.tolist()], origin=keep,
    )


def disjoint_union(graphs) -> tuple[CircuitGraph, np.ndarray]:
    """Concatenate graphs; returns the union and the node offset of each part."""
    graphs = list(graphs)
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    types = np.concatenate([g.node_types for g in graphs]) if graphs else np.zeros(0, np.int64)
    src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64)
    dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]) if graphs else np.zeros(0, np.int64)
    et = np.concatenate([g.etype for g in graphs]) if graphs else np.zeros(0, np.int64)
    names = [nm for g in graphs for nm in g.names]
    return CircuitGraph(types, src, dst, et, names), offsets[:-1]
