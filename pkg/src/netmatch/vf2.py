"""VF2-style enumeration of labeled directed subgraph monomorphisms.

A mapping is a tuple ``m`` with ``m[t]`` the host node assigned to target
node ``t``. It must preserve node types and carry every target edge
``(u -> v, r)`` onto a host edge ``(m[u] -> m[v], r)``; extra host edges
among the mapped nodes are allowed.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .graph import CircuitGraph

Mapping = tuple[int, ...]


class VF2Matcher:
    """Search state shared by repeated queries of one target against one host.

    The per-node candidate filters (type and per-relation degree dominance)
    are computed once, so many region-restricted searches against the same
    host stay cheap.
    """

    def __init__(self, target: CircuitGraph, host: CircuitGraph):
        if target.num_nodes == 0:
            raise ValueError("target graph is empty")
        self.target = target
        self.host = host
        t_types = target.node_types
        h_types = host.node_types
        t_sig = target.degree_signature
        h_sig = host.degree_signature
        # feasible[u][h]: host node h can ever host target node u
        self.feasible = []
        for u in range(target.num_nodes):
            ok = (h_types == t_types[u]) & np.all(h_sig >= t_sig[u], axis=1)
            self.feasible.append(ok)
        self.order = self._match_order()
        pos = {u: k for k, u in enumerate(self.order)}
        t_succ, t_pred = target.succ, target.pred
        self._constraints = []
        self._later = []
        for k, u in enumerate(self.order):
            cons = []
            for w in self.order[:k]:
                out_t = t_succ[u].get(w, frozenset())
                in_t = t_pred[u].get(w, frozenset())
                if out_t or in_t:
                    cons.append((w, out_t, in_t))
            self._constraints.append(cons)
            self._later.append(sum(1 for v in target.neighbors[u] if pos[v] > k))
        self._first_candidates = np.flatnonzero(self.feasible[self.order[0]]).tolist()

    def _match_order(self) -> list[int]:
        t = self.target
        host_counts = self.host.type_counts()
        rail = t.is_rail
        deg = np.array([len(nb) for nb in t.neighbors])

        def rarity(u: int) -> int:
            return int(host_counts[t.node_types[u]])

        n = t.num_nodes
        remaining = set(range(n))
        order: list[int] = []
        while remaining:
            # start (or restart, for disconnected targets) at the rarest non-rail node
            start = min(remaining, key=lambda u: (bool(rail[u]), rarity(u), -deg[u], u))
            order.append(start)
            remaining.discard(start)
            placed = set(order)
            while True:
                frontier = [u for u in remaining if any(v in placed for v in t.neighbors[u])]
                if not frontier:
                    break
                # rails last: their host adjacency is huge, so they make poor candidate sources
                nxt = min(frontier, key=lambda u: (
                    bool(rail[u]),
                    -sum(1 for v in t.neighbors[u] if v in placed),
                    rarity(u), -deg[u], u,
                ))
                order.append(nxt)
                placed.add(nxt)
                remaining.discard(nxt)
        return order

    def iter_matches(self, allowed: Iterable[int] | None = None) -> Iterator[Mapping]:
        """Yield every monomorphism whose image lies in ``allowed`` (whole host if None)."""
        host = self.host
        h_succ, h_pred, h_nb = host.succ, host.pred, host.neighbors
        n_t = self.target.num_nodes
        order = self.order
        feasible = self.feasible
        constraints = self._constraints
        later = self._later
        allowed_set = None if allowed is None else set(int(a) for a in allowed)

        if allowed_set is None:
            first = self._first_candidates
        else:
            ok = feasible[order[0]]
            first = sorted(h for h in allowed_set if ok[h])

        mapping = [-1] * n_t
        used: set[int] = set()

        def candidates(k: int):
            cons = constraints[k]
            if not cons:
                return first if k == 0 else self._restart_candidates(k, allowed_set)
            best = None
            for w, out_t, in_t in cons:
                hw = mapping[w]
                # u -> w edges: u's image must be a host predecessor of hw
                pool = h_pred[hw] if out_t else h_succ[hw]
                if best is None or len(pool) < len(best):
                    best = pool
            return best

        def feasible_pair(k: int, u: int, h: int) -> bool:
            if h in used or not feasible[u][h]:
                return False
            if allowed_set is not None and h not in allowed_set:
                return False
            succ_h, pred_h = h_succ[h], h_pred[h]
            for w, out_t, in_t in constraints[k]:
                hw = mapping[w]
                if out_t and not out_t <= succ_h.get(hw, frozenset()):
                    return False
                if in_t and not in_t <= pred_h.get(hw, frozenset()):
                    return False
            # look-ahead: enough unused host neighbours for the target neighbours still to come
            if later[k]:
                busy = sum(1 for x in used if x in succ_h or x in pred_h)
                if len(h_nb[h]) - busy < later[k]:
                    return False
            return True

        def extend(k: int):
            if k == n_t:
                yield tuple(mapping)
                return
            u = order[k]
            for h in list(candidates(k)):
                if feasible_pair(k, u, h):
                    mapping[u] = h
                    used.add(h)
                    yield from extend(k + 1)
                    used.discard(h)
                    mapping[u] = -1

        yield from extend(0)

    def _restart_candidates(self, k: int, allowed_set):
        ok = self.feasible[self.order[k]]
        if allowed_set is None:
            return np.flatnonzero(ok).tolist()
        return sorted(h for h in allowed_set if ok[h])

    def matches(self, allowed=None, limit: int | None = None) -> list[Mapping]:
        out = []
        for m in self.iter_matches(allowed):
            out.append(m)
            if limit is not None and len(out) >= limit:
                break
        return out


def enumerate_matches(target: CircuitGraph, host: CircuitGraph, limit: int | None = None,
                      allowed=None) -> list[Mapping]:
    """All (or the first ``limit``) distinct monomorphisms of ``target`` into ``host``."""
    return VF2Matcher(target, host).matches(allowed, limit)


def contains(target: CircuitGraph, host: CircuitGraph, allowed=None) -> bool:
    return bool(VF2Matcher(target, host).matches(allowed, limit=1))


def is_valid_mapping(target: CircuitGraph, host: CircuitGraph, mapping: Mapping) -> bool:
    """Check a mapping directly against the edge lists."""
    if len(mapping) != target.num_nodes or len(set(mapping)) != len(mapping):
        return False
    m = np.asarray(mapping, dtype=np.int64)
    if np.any(m < 0) or np.any(m >= host.num_nodes):
        return False
    if not np.array_equal(host.node_types[m], target.node_types):
        return False
    host_edges = set(zip(host.src.tolist(), host.dst.tolist(), host.etype.tolist()))
    return all(
        (int(m[s]), int(m[d]), r) in host_edges
        for s, d, r in zip(target.src.tolist(), target.dst.tolist(), target.etype.tolist())
    )


def automorphisms(target: CircuitGraph) -> list[Mapping]:
    return enumerate_matches(target, target)


def count_classes(matches: Iterable[Mapping], autos: list[Mapping]) -> int:
    """Number of matches up to target automorphism (``m`` ~ ``m o sigma``)."""
    seen = set()
    for m in matches:
        seen.add(min(tuple(m[s] for s in sigma) for sigma in autos))
    return len(seen)
