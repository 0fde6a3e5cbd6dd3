"""K-hop region embeddings pooled straight out of a whole-graph hop table.

Hop ``l`` is summed over the nodes within ``K - l`` hops of the center. A
node at that distance only ever saw messages from inside the ``K``-hop
ball during ``l`` rounds of message passing, so the pooled vector is the
same as running the network on the extracted region alone.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import rgcn
from .graph import CircuitGraph, KHopRegion, bfs_distances, induced_subgraph, region_from_distances
from .rgcn import GNNConfig, HopEmbeddingTable, LayerParams


def pooling_matrices(regions: Sequence[KHopRegion], n: int, L: int) -> list[sp.csr_matrix]:
    """``P[l]`` with one row per region and ones on the hop-``l`` node set."""
    mats = []
    for l in range(L + 1):
        sets = [r.node_sets[l] for r in regions]
        indptr = np.zeros(len(sets) + 1, dtype=np.int64)
        np.cumsum([len(s) for s in sets], out=indptr[1:])
        cols = np.concatenate(sets) if sets else np.zeros(0, dtype=np.int64)
        mats.append(sp.csr_matrix((np.ones(len(cols)), cols, indptr), shape=(len(sets), n)))
    return mats


def pool(table: HopEmbeddingTable, mats: list[sp.csr_matrix]) -> np.ndarray:
    return np.hstack([m @ h for m, h in zip(mats, table.hops)])


def _check_regions(table: HopEmbeddingTable, regions: Sequence[KHopRegion]) -> None:
    for r in regions:
        if r.L != table.L:
            raise ValueError(f"region built with L={r.L} but the table has L={table.L}")


def region_embedding(table: HopEmbeddingTable, region: KHopRegion) -> np.ndarray:
    _check_regions(table, [region])
    return pool(table, pooling_matrices([region], table.graph.num_nodes, table.L))[0]


def regions_for(g: CircuitGraph, centers: Sequence[int], K: int, L: int,
                through_rails: bool = False) -> list[KHopRegion]:
    return [region_from_distances(int(c), K, L, bfs_distances(g, int(c), K, through_rails)) for c in centers]


def _adjacency(g: CircuitGraph) -> sp.csr_matrix:
    n = g.num_nodes
    ones = np.ones(2 * g.num_edges)
    a = sp.csr_matrix((ones, (np.concatenate([g.src, g.dst]), np.concatenate([g.dst, g.src]))), shape=(n, n))
    a.data[:] = 1.0
    return a


def reach_matrices(g: CircuitGraph, centers: Sequence[int], K: int, through_rails: bool = False
                   ) -> list[sp.csr_matrix]:
    """``R[k][i, v] = 1`` iff ``v`` lies within ``k`` hops of ``centers[i]``, for k = 0..K.

    Same distance as ``bfs_distances``: a center always expands, any other
    rail only when ``through_rails``.
    """
    n = g.num_nodes
    centers = np.asarray(centers, dtype=np.int64)
    a = _adjacency(g)
    if through_rails:
        m = a
    else:
        keep = sp.diags((~g.is_rail).astype(float))
        m = (keep @ a).tocsr()
    r = sp.csr_matrix((np.ones(len(centers)), centers, np.arange(len(centers) + 1)), shape=(len(centers), n))
    out = [r]
    for k in range(1, K + 1):
        step = a if k == 1 else m
        r = (r + r @ step).tocsr()
        r.data[:] = 1.0
        r.sort_indices()
        out.append(r)
    return out


def batch_region_embeddings(table: HopEmbeddingTable, centers: Sequence[int], K: int, L: int | None = None,
                            through_rails: bool = False, chunk: int = 2048, keep_regions: bool = False):
    """One row per center; identical bit for bit to calling ``region_embedding`` per center.

    With ``keep_regions`` also returns a CSR matrix whose row ``i`` lists the
    K-hop node set of ``centers[i]``.
    """
    L = table.L if L is None else L
    if L != table.L:
        raise ValueError(f"L={L} does not match the table (L={table.L})")
    centers = np.asarray(centers, dtype=np.int64)
    n = table.graph.num_nodes
    dim = sum(h.shape[1] for h in table.hops)
    rows, regions = [], []
    for start in range(0, len(centers), chunk):
        part = centers[start:start + chunk]
        reach = reach_matrices(table.graph, part, K, through_rails)
        empty = sp.csr_matrix((len(part), n))
        mats = [reach[K - l] if K - l >= 0 else empty for l in range(L + 1)]
        rows.append(pool(table, mats))
        if keep_regions:
            regions.append(reach[K])
    emb = np.vstack(rows) if rows else np.zeros((0, dim))
    if not keep_regions:
        return emb
    reg = sp.vstack(regions, format="csr") if regions else sp.csr_matrix((0, n))
    return emb, reg


def embed_regions(table: HopEmbeddingTable, regions: Sequence[KHopRegion]) -> np.ndarray:
    _check_regions(table, regions)
    dim = sum(h.shape[1] for h in table.hops)
    if not regions:
        return np.zeros((0, dim))
    return pool(table, pooling_matrices(regions, table.graph.num_nodes, table.L))


def target_embedding(target: CircuitGraph, params: list[LayerParams], config: GNNConfig) -> np.ndarray:
    """Every hop summed over every target node."""
    table = rgcn.forward(target, params, config)
    return np.concatenate([h.sum(axis=0) for h in table.hops])


def standalone_region_embedding(g: CircuitGraph, region: KHopRegion, params: list[LayerParams],
                                config: GNNConfig) -> np.ndarray:
    """Reference path: cut the region out, run the network on it alone, pool the same sets."""
    sub = induced_subgraph(g, region.nodes)
    table = rgcn.forward(sub, params, config)
    parts = []
    for l, h in enumerate(table.hops):
        local = np.searchsorted(sub.origin, region.node_sets[l])
        parts.append(h[local].sum(axis=0))
    return np.concatenate(parts)
