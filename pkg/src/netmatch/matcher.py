"""Rank every K-hop region by predicted containment, then verify with VF2 in that order."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import embedder, rgcn, vf2
from .classifier import Model, mlp_forward
from .graph import CircuitGraph, radius


@dataclass(frozen=True)
class MatchConfig:
    tau: float = 0.0
    K: int | None = None  # default: radius of the target
    radius_method: str = "signal"
    through_rails: bool = False
    precheck: bool = True  # skip regions lacking enough nodes of some type
    chunk: int = 2048


@dataclass(frozen=True)
class MatchResult:
    mapping: vf2.Mapping
    region_center: int
    region_rank: int
    p_hat: float
    verified_at: int  # regions examined up to and including the one that produced this mapping

    def to_json(self) -> dict:
        d = asdict(self)
        d["mapping"] = list(self.mapping)
        return d


@dataclass
class MatchRunStats:
    regions_total: int = 0
    regions_examined: int = 0
    vf2_calls: int = 0
    matches_raw: int = 0
    matches_distinct: int = 0
    K: int = 0
    tau: float = 0.0
    complete: bool = True
    note: str = ""
    seconds: dict = field(default_factory=lambda: {"embed": 0.0, "rank": 0.0, "verify": 0.0})

    @property
    def total_seconds(self) -> float:
        return sum(self.seconds.values())

    def to_json(self, timings: bool = True) -> dict:
        d = asdict(self)
        if timings:
            d["seconds"] = dict(self.seconds, total=self.total_seconds)
        else:
            d.pop("seconds")
        return d


def dedup(tagged: Iterable[tuple[vf2.Mapping, object]]) -> list[tuple[vf2.Mapping, object]]:
    """Keep the first occurrence of every mapping; a mapping is its set of (target, host) pairs."""
    seen: set[vf2.Mapping] = set()
    out = []
    for m, tag in tagged:
        key = tuple(m)
        if key not in seen:
            seen.add(key)
            out.append((key, tag))
    return out


def _too_big(entire: CircuitGraph, target: CircuitGraph) -> str:
    if target.num_nodes > entire.num_nodes:
        return f"target has {target.num_nodes} nodes, host only {entire.num_nodes}"
    if np.any(target.type_counts() > entire.type_counts()):
        return "host lacks enough nodes of some type for the target"
    return ""


def rank_regions(entire: CircuitGraph, target: CircuitGraph, model: Model, K: int, config: MatchConfig,
                 stats: MatchRunStats):
    """Predicted probability for every center, the visiting order and the region node sets."""
    t0 = time.perf_counter()
    table = rgcn.forward(entire, model.gnn, model.config)
    centers = np.arange(entire.num_nodes)
    emb, regions = embedder.batch_region_embeddings(table, centers, K, through_rails=config.through_rails,
                                                    chunk=config.chunk, keep_regions=True)
    h_t = model.target_embedding(target)
    p = np.empty(len(centers))
    for s in range(0, len(centers), config.chunk):
        block = emb[s:s + config.chunk]
        p[s:s + config.chunk] = mlp_forward(np.hstack([block, np.broadcast_to(h_t, block.shape)]), model.mlp)[0]
    t1 = time.perf_counter()
    order = np.lexsort((centers, -p))
    t2 = time.perf_counter()
    stats.seconds["embed"] += t1 - t0
    stats.seconds["rank"] += t2 - t1
    return p, order, regions


def _run(entire: CircuitGraph, target: CircuitGraph, model: Model, config: MatchConfig, first_only: bool):
    stats = MatchRunStats(regions_total=entire.num_nodes, tau=config.tau)
    K = radius(target, config.through_rails, config.radius_method) if config.K is None else config.K
    stats.K = K
    reason = _too_big(entire, target)
    if reason:
        stats.note = reason
        return [], stats
    p, order, regions = rank_regions(entire, target, model, K, config, stats)

    t0 = time.perf_counter()
    matcher = vf2.VF2Matcher(target, entire)
    need = target.type_counts()
    if config.precheck:
        onehot = entire.features
        counts = regions @ onehot
        enough = np.all(counts >= need, axis=1)
    else:
        enough = np.ones(entire.num_nodes, dtype=bool)
    indptr, indices = regions.indptr, regions.indices
    results: list[MatchResult] = []
    seen: set[vf2.Mapping] = set()
    raw = 0
    for rank, c in enumerate(order.tolist()):
        if config.tau > 0 and p[c] < config.tau:
            break
        stats.regions_examined = rank + 1
        if not enough[c]:
            continue
        stats.vf2_calls += 1
        allowed = indices[indptr[c]:indptr[c + 1]].tolist()
        for m in matcher.iter_matches(allowed):
            raw += 1
            if m in seen:
                continue
            seen.add(m)
            results.append(MatchResult(m, c, rank, float(p[c]), rank + 1))
            if first_only:
                break
        if first_only and results:
            break
    stats.seconds["verify"] += time.perf_counter() - t0
    stats.matches_raw = raw
    stats.matches_distinct = len(results)
    stats.complete = config.tau <= 0 or stats.regions_examined == stats.regions_total
    if not stats.complete:
        stats.note = f"regions with p < {config.tau} skipped; completeness not guaranteed"
    return results, stats


def match_all(entire: CircuitGraph, target: CircuitGraph, model: Model,
              config: MatchConfig = MatchConfig()) -> tuple[list[MatchResult], MatchRunStats]:
    """Every distinct mapping; with tau = 0 this is exactly the whole-graph VF2 set."""
    return _run(entire, target, model, config, first_only=False)


def match_one(entire: CircuitGraph, target: CircuitGraph, model: Model,
              config: MatchConfig = MatchConfig()) -> tuple[MatchResult | None, MatchRunStats]:
    results, stats = _run(entire, target, model, config, first_only=True)
    return (results[0] if results else None), stats


def baseline(entire: CircuitGraph, target: CircuitGraph, first_only: bool = False
             ) -> tuple[list[vf2.Mapping], float]:
    """Plain whole-graph VF2, timed, for the reduction column of reports."""
    t0 = time.perf_counter()
    found = vf2.enumerate_matches(target, entire, limit=1 if first_only else None)
    return found, time.perf_counter() - t0


def reduction(ours: float, base: float) -> float:
    """Percent time saved relative to ``base``; negative when slower."""
    return 100.0 * (base - ours) / base if base > 0 else 0.0
