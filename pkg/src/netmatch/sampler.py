"""Training samples: K-hop regions labelled by whether they contain a target.

Every label is checked with VF2 when the sample is made. Negatives come in
four kinds: regions that clip a match (Partial), positive regions with one
matched instance corrupted (Mutation), regions around other targets
(Others) and random regions (Random).
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping as TMapping, Sequence

import numpy as np

from . import vf2
from .graph import (
    NMOS,
    PMOS,
    REVERSE_OFFSET,
    CircuitGraph,
    bfs_distances,
    induced_subgraph,
    radius,
)

POSITIVE, PARTIAL, MUTATION, OTHERS, RANDOM, CENTER = "Positive", "Partial", "Mutation", "Others", "Random", "Center"
KINDS = (POSITIVE, PARTIAL, MUTATION, OTHERS, RANDOM)
_KIND_CODES = {POSITIVE: 1, PARTIAL: 2, MUTATION: 3, OTHERS: 4, RANDOM: 5, CENTER: 6}
_SHORT = {"P": POSITIVE, "T": PARTIAL, "M": MUTATION, "O": OTHERS, "R": RANDOM}

# drain <-> source edge types, forward and reverse, PMOS and NMOS
_DS_SWAP = {0: 2, 2: 0, 4: 6, 6: 4, 14: 16, 16: 14, 18: 20, 20: 18}


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sample:
    center: int
    K: int
    target_id: str
    label: int | None
    kind: str
    host: str = ""
    graph: CircuitGraph | None = None

    def __post_init__(self):
        if self.kind in KINDS and (self.label == 1) != (self.kind == POSITIVE):
            raise ValueError(f"{self.kind} sample cannot have label {self.label}")

    def to_json(self) -> dict:
        d = {"target_id": self.target_id, "kind": self.kind, "label": self.label,
             "center": self.center, "K": self.K, "host": self.host}
        if self.graph is not None:
            d["mutated_graph"] = self.graph.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Sample":
        g = d.get("mutated_graph")
        return cls(int(d["center"]), int(d["K"]), str(d["target_id"]), d["label"], d["kind"],
                   d.get("host", ""), None if g is None else CircuitGraph.from_json(g))

    def __eq__(self, other) -> bool:
        return isinstance(other, Sample) and self.to_json() == other.to_json()

    __hash__ = None


def stream(seed: int, target_id: str, kind: str) -> np.random.Generator:
    """Independent generator per (seed, target, kind), so call order never matters."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(target_id.encode()), _KIND_CODES[kind]]))


def write_jsonl(samples: Iterable[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [Sample.from_json(json.loads(line)) for line in fh if line.strip()]


class TargetSampler:
    """Caches the matches, balls and VF2 state for one (host, target) pair."""

    def __init__(self, entire: CircuitGraph, target: CircuitGraph, target_id: str = "target", host_id: str = "",
                 K: int | None = None, matches: Sequence[vf2.Mapping] | None = None, through_rails: bool = False):
        self.entire = entire
        self.target = target
        self.target_id = target_id
        self.host_id = host_id
        self.through_rails = through_rails
        self.K = radius(target, through_rails) if K is None else K
        self.vf2 = vf2.VF2Matcher(target, entire)
        self.matches = list(self.vf2.iter_matches()) if matches is None else list(matches)
        self._balls: dict[int, set[int]] = {}

    def ball(self, v: int) -> set[int]:
        b = self._balls.get(v)
        if b is None:
            b = set(bfs_distances(self.entire, v, self.K, self.through_rails))
            self._balls[v] = b
        return b

    def region(self, center: int) -> list[int]:
        return sorted(self.ball(center))

    def region_contains(self, center: int) -> bool:
        return bool(self.vf2.matches(self.ball(center), limit=1))

    def _anchors(self, m: vf2.Mapping) -> tuple[list[int], list[int]]:
        rail = self.entire.is_rail
        core = [h for h in m if not rail[h]]
        rails = [h for h in m if rail[h]]
        return (core, rails) if core else (rails[:1], rails[1:])

    def eligible_centers(self, matches: Sequence[vf2.Mapping] | None = None) -> list[int]:
        """Centers whose K-ball covers some match entirely (distance is symmetric)."""
        out: set[int] = set()
        for m in self.matches if matches is None else matches:
            core, rails = self._anchors(m)
            common = None
            for h in core:
                common = set(self.ball(h)) if common is None else common & self.ball(h)
                if not common:
                    break
            # rail balls span the whole host, so test rails from the center side instead
            if common:
                out.update(c for c in common if all(r in self.ball(c) for r in rails))
        return sorted(out)

    def sample(self, center: int, kind: str, graph: CircuitGraph | None = None) -> Sample:
        return Sample(int(center), self.K, self.target_id, int(kind == POSITIVE), kind, self.host_id, graph)

    # -- the five kinds ---------------------------------------------------

    def positive(self, count: int, rng: np.random.Generator) -> list[Sample]:
        if not self.matches:
            raise SamplingError(f"{self.target_id} does not occur in host {self.host_id!r}")
        pool = self.eligible_centers()
        pick = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
        return [self.sample(pool[i], POSITIVE) for i in pick.tolist()]

    def partial(self, count: int, rng: np.random.Generator) -> list[Sample]:
        if not self.matches:
            raise SamplingError(f"{self.target_id} does not occur in host {self.host_id!r}")
        rail = self.entire.is_rail
        matched = {h for m in self.matches for h in m if not rail[h]}
        near = _multi_source_distances(self.entire, matched, 2 * self.K, self.through_rails)
        pool = sorted(v for v, d in near.items() if d >= 1)
        out = []
        for i in rng.permutation(len(pool)).tolist():
            if len(out) >= count:
                break
            c = pool[i]
            if self.ball(c).isdisjoint(matched):
                continue
            if not self.region_contains(c):
                out.append(self.sample(c, PARTIAL))
        return out

    def mutation(self, count: int, rng: np.random.Generator, positives: Sequence[Sample] | None = None,
                 scope: str = "instance") -> list[Sample]:
        if scope not in ("instance", "region"):
            raise ValueError(f"unknown mutation scope {scope!r}")
        if positives is None:
            positives = self.positive(max(count * 2, count + 10), rng)
        out = []
        order = rng.permutation(len(positives)).tolist()
        for i in order:
            if len(out) >= count:
                break
            c = positives[i].center
            nodes = self.region(c)
            sub = induced_subgraph(self.entire, nodes)
            inside = self.ball(c)
            local_of = {h: k for k, h in enumerate(nodes)}
            in_region = [m for m in self.matches if all(h in inside for h in m)]
            if not in_region:
                continue
            m = in_region[int(rng.integers(len(in_region)))]
            if scope == "instance":
                cells = [local_of[h] for h in m if self.entire.node_types[h] in (PMOS, NMOS)]
            else:
                cells = np.flatnonzero(np.isin(sub.node_types, (PMOS, NMOS))).tolist()
            first = ("flip", "swap")[int(rng.integers(2))]
            for how in (first, "swap" if first == "flip" else "flip"):
                mutated = mutate(sub, cells, how)
                if not vf2.contains(self.target, mutated):
                    out.append(self.sample(local_of[c], MUTATION, mutated))
                    break
        return out

    def others(self, count: int, rng: np.random.Generator,
               other_matches: TMapping[str, Sequence[vf2.Mapping]]) -> list[Sample]:
        pool: set[int] = set()
        for oid, ms in other_matches.items():
            if oid != self.target_id:
                pool.update(self.eligible_centers(ms))
        pool_l = sorted(pool)
        out = []
        for i in rng.permutation(len(pool_l)).tolist():
            if len(out) >= count:
                break
            if not self.region_contains(pool_l[i]):
                out.append(self.sample(pool_l[i], OTHERS))
        return out

    def random(self, count: int, rng: np.random.Generator) -> list[Sample]:
        out = []
        for c in rng.permutation(self.entire.num_nodes).tolist():
            if len(out) >= count:
                break
            if not self.region_contains(c):
                out.append(self.sample(c, RANDOM))
        if count > 0 and not out:
            raise SamplingError(f"every region of host {self.host_id!r} contains {self.target_id}")
        return out


def _multi_source_distances(g: CircuitGraph, sources: Iterable[int], max_hops: int,
                            through_rails: bool = False) -> dict[int, int]:
    nb, rail = g.neighbors, g.is_rail
    dist = {s: 0 for s in sources}
    frontier = list(dist)
    d = 0
    while frontier and d < max_hops:
        d += 1
        nxt = []
        for u in frontier:
            if rail[u] and not through_rails and dist[u] > 0:
                continue
            for v in nb[u]:
                if v not in dist:
                    dist[v] = d
                    nxt.append(v)
        frontier = nxt
    return dist


def mutate(g: CircuitGraph, cells: Iterable[int], how: str) -> CircuitGraph:
    """Copy of ``g`` with the given MOS cells flipped PMOS<->NMOS or drain/source swapped."""
    cells = np.array(sorted(set(int(c) for c in cells)), dtype=np.int64)
    types = g.node_types.copy()
    etype = g.etype.copy()
    is_cell = np.zeros(g.num_nodes, dtype=bool)
    is_cell[cells] = True
    endpoint = np.where(etype < REVERSE_OFFSET, g.dst, g.src)
    hit = is_cell[endpoint] & (g.node_types[endpoint] >= PMOS) & (g.node_types[endpoint] <= NMOS)
    if how == "flip":
        mos = cells[np.isin(types[cells], (PMOS, NMOS))]
        types[mos] = np.where(types[mos] == PMOS, NMOS, PMOS)
        base = etype % REVERSE_OFFSET
        etype[hit] = np.where(base[hit] < 4, etype[hit] + 4, etype[hit] - 4)
    elif how == "swap":
        sel = np.flatnonzero(hit)
        etype[sel] = [_DS_SWAP.get(int(r), int(r)) for r in etype[sel]]
    else:
        raise ValueError(f"unknown mutation {how!r}")
    return CircuitGraph(types, g.src, g.dst, etype, g.names, origin=g.origin)


def positive_samples(entire, target, count, rng, **kw) -> list[Sample]:
    return TargetSampler(entire, target, **kw).positive(count, rng)


def partial_samples(entire, target, count, rng, **kw) -> list[Sample]:
    return TargetSampler(entire, target, **kw).partial(count, rng)


def mutation_samples(entire, target, count, rng, positives=None, scope="instance", **kw) -> list[Sample]:
    out = TargetSampler(entire, target, **kw).mutation(count, rng, positives, scope)
    if len(out) < count:
        warnings.warn(f"only {len(out)} of {count} mutation samples kept", stacklevel=2)
    return out


def others_samples(entire, target, other_targets: TMapping[str, CircuitGraph], count, rng, **kw) -> list[Sample]:
    ts = TargetSampler(entire, target, **kw)
    other = {oid: vf2.enumerate_matches(g, entire) for oid, g in other_targets.items() if oid != ts.target_id}
    return ts.others(count, rng, other)


def random_samples(entire, target, count, rng, **kw) -> list[Sample]:
    return TargetSampler(entire, target, **kw).random(count, rng)


def all_centers(entire: CircuitGraph, K: int, target_id: str = "", host_id: str = "") -> list[Sample]:
    return [Sample(v, K, target_id, None, CENTER, host_id) for v in range(entire.num_nodes)]


@dataclass(frozen=True)
class SampleCounts:
    positive: int = 200
    partial: int = 100
    mutation: int = 50
    others: int = 50
    random: int = 300

    def restrict(self, kinds: str) -> "SampleCounts":
        """Zero every kind not named; ``kinds`` like ``"P+R"`` or ``"ALL"``."""
        if kinds.upper() == "ALL":
            return self
        keep = {_SHORT[k.strip().upper()] for k in kinds.split("+") if k.strip()}
        if POSITIVE not in keep:
            raise ValueError("positive samples cannot be disabled")
        return SampleCounts(*(getattr(self, k.lower()) if k in keep else 0 for k in KINDS))

    def of(self, kind: str) -> int:
        return getattr(self, kind.lower())


def _split(total: int, parts: int) -> list[int]:
    return [total // parts + (1 if i < total % parts else 0) for i in range(parts)]


def build_sample_set(hosts: TMapping[str, CircuitGraph], targets: TMapping[str, CircuitGraph],
                     counts: SampleCounts = SampleCounts(), seed: int = 0, scope: str = "instance",
                     through_rails: bool = False, matches: TMapping[tuple[str, str], list] | None = None,
                     ) -> list[Sample]:
    """Samples for every target, spread evenly over the hosts that contain it.

    A host that runs short leaves its quota to the hosts after it.
    """
    matches = dict(matches or {})
    for hid, h in hosts.items():
        for tid, t in targets.items():
            if (hid, tid) not in matches:
                matches[(hid, tid)] = vf2.enumerate_matches(t, h)
    out: list[Sample] = []
    for tid, t in targets.items():
        samplers = [TargetSampler(h, t, tid, hid, matches=matches[(hid, tid)], through_rails=through_rails)
                    for hid, h in hosts.items()]
        present = [s for s in samplers if s.matches]
        if not present:
            raise SamplingError(f"target {tid} occurs in none of the hosts")
        positives_by_host: dict[str, list[Sample]] = {}
        for kind in KINDS:
            want = counts.of(kind)
            if want == 0:
                continue
            rng = stream(seed, tid, kind)
            users = samplers if kind in (RANDOM, OTHERS) else present
            got: list[Sample] = []
            for i, s in enumerate(users):
                quota = _split(want - len(got), len(users) - i)[0]
                if quota <= 0:
                    continue
                if kind == POSITIVE:
                    part = s.positive(quota, rng)
                    positives_by_host[s.host_id] = part
                elif kind == PARTIAL:
                    part = s.partial(quota, rng)
                elif kind == MUTATION:
                    pos = positives_by_host.get(s.host_id) or s.positive(quota * 2 + 10, rng)
                    part = s.mutation(quota, rng, pos, scope)
                elif kind == OTHERS:
                    other = {oid: matches[(s.host_id, oid)] for oid in targets if oid != tid}
                    part = s.others(quota, rng, other)
                else:
                    part = s.random(quota, rng) if s.entire.num_nodes else []
                got.extend(part)
            if len(got) < want:
                warnings.warn(f"{tid}: only {len(got)} of {want} {kind} samples", stacklevel=2)
            out.extend(got)
    return out


def eval_sample_set(hosts: TMapping[str, CircuitGraph], targets: TMapping[str, CircuitGraph],
                    positives: int = 100, randoms: int = 100, seed: int = 1, through_rails: bool = False,
                    matches: TMapping[tuple[str, str], list] | None = None) -> list[Sample]:
    """Held-out set: positives plus random negatives only."""
    return build_sample_set(hosts, targets, SampleCounts(positives, 0, 0, 0, randoms), seed,
                            through_rails=through_rails, matches=matches)
