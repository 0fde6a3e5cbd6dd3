"""Relational graph convolution with basis-decomposed relation weights.

Layer update for node i (messages travel along edge direction, so the
neighbours of i under relation r are its in-neighbours of that type)::

    H'[i] = relu( sum_r sum_{j in N_r(i)} H[j] W_r / |N_r(i)|  +  H[i] W_0 )
    W_r   = sum_b a[r, b] V_b

Forward and backward passes are plain numpy/scipy; everything is float64
unless ``dtype`` is lowered for inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import NUM_NODE_TYPES, NUM_RELATIONS, CircuitGraph


@dataclass(frozen=True)
class GNNConfig:
    layers: int = 2
    hidden: int = 32
    bases: int = 4
    input_dim: int = NUM_NODE_TYPES
    num_relations: int = NUM_RELATIONS
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")
        if not 1 <= self.bases <= self.num_relations:
            raise ValueError("bases must be in 1..num_relations")
        if self.input_dim != NUM_NODE_TYPES:
            raise ValueError(f"input_dim is fixed at {NUM_NODE_TYPES}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden] * self.layers

    @property
    def embedding_dim(self) -> int:
        return sum(self.dims)


@dataclass
class LayerParams:
    bases: np.ndarray        # (B, in, out)
    coeffs: np.ndarray       # (R, B)
    self_weight: np.ndarray  # (in, out)

    def relation_weights(self) -> np.ndarray:
        """All W_r materialized, shape (R, in, out)."""
        return np.einsum("rb,bio->rio", self.coeffs, self.bases)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"bases": self.bases, "coeffs": self.coeffs, "self_weight": self.self_weight}

    def check(self, in_dim: int, out_dim: int, config: GNNConfig) -> None:
        B, R = config.bases, config.num_relations
        if self.bases.shape != (B, in_dim, out_dim):
            raise ValueError(f"bases shape {self.bases.shape} != {(B, in_dim, out_dim)}")
        if self.coeffs.shape != (R, B):
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {(R, B)}")
        if self.self_weight.shape != (in_dim, out_dim):
            raise ValueError(f"self_weight shape {self.self_weight.shape} != {(in_dim, out_dim)}")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: GNNConfig, rng: np.random.Generator | None = None) -> list[LayerParams]:
    """Xavier-uniform initialization from ``config.seed`` (or the given generator)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    layers = []
    dims = config.dims
    for i, o in zip(dims[:-1], dims[1:]):
        layers.append(LayerParams(
            bases=_glorot(rng, (config.bases, i, o), i, o),
            coeffs=_glorot(rng, (config.num_relations, config.bases), config.num_relations, config.bases),
            self_weight=_glorot(rng, (i, o), i, o),
        ))
    return layers


class GraphOperator:
    """Message-passing structure of one graph: sparse in-edge matrix and 1/c normalizers."""

    def __init__(self, g: CircuitGraph, num_relations: int = NUM_RELATIONS):
        self.graph = g
        self.n = g.num_nodes
        self.src, self.dst, self.etype = g.src, g.dst, g.etype
        if len(self.etype) and self.etype.max() >= num_relations:
            raise ValueError("edge type exceeds relation count")
        key = self.dst * num_relations + self.etype
        _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        self.norm = 1.0 / counts[inv]
        # edges are sorted by destination, so CSR rows are contiguous runs
        self.indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.dst, minlength=self.n), out=self.indptr[1:])
        self.num_relations = num_relations

    def relation_matrix(self, coeff_column: np.ndarray) -> sp.csr_matrix:
        """Sparse S with S[i, j] = sum over edges j -> i of coeff[r] / c_{i,r}."""
        data = coeff_column[self.etype] * self.norm
        return sp.csr_matrix((data, self.src, self.indptr), shape=(self.n, self.n))


@dataclass
class ForwardCache:
    op: GraphOperator
    hops: list[np.ndarray]
    pre: list[np.ndarray] = field(default_factory=list)
    z: list[np.ndarray] = field(default_factory=list)
    mats: list[list[sp.csr_matrix]] = field(default_factory=list)


def _as_operator(g, config: GNNConfig) -> GraphOperator:
    return g if isinstance(g, GraphOperator) else GraphOperator(g, config.num_relations)


def forward_with_cache(g, params: list[LayerParams], config: GNNConfig, dtype=np.float64) -> ForwardCache:
    op = _as_operator(g, config)
    if len(params) != config.layers:
        raise ValueError(f"expected {config.layers} layers of parameters, got {len(params)}")
    dims = config.dims
    h = op.graph.features.astype(dtype)
    cache = ForwardCache(op, [h])
    for layer, p in enumerate(params):
        p.check(dims[layer], dims[layer + 1], config)
        mats = [op.relation_matrix(p.coeffs[:, b].astype(dtype)) for b in range(config.bases)]
        z = np.hstack([m @ h for m in mats]) if op.n else np.zeros((0, config.bases * dims[layer]), dtype)
        vcat = p.bases.astype(dtype).reshape(config.bases * dims[layer], dims[layer + 1])
        pre = z @ vcat + h @ p.self_weight.astype(dtype)
        h = np.maximum(pre, 0.0)
        cache.pre.append(pre)
        cache.z.append(z)
        cache.mats.append(mats)
        cache.hops.append(h)
    return cache


@dataclass
class HopEmbeddingTable:
    """Per-hop node embeddings ``hops[l]`` of one graph; ``hops[0]`` is the one-hot input."""

    graph: CircuitGraph
    hops: list[np.ndarray]

    @property
    def L(self) -> int:
        return len(self.hops) - 1

    def __getitem__(self, l: int) -> np.ndarray:
        return self.hops[l]


def forward(g, params: list[LayerParams], config: GNNConfig, dtype=np.float64) -> HopEmbeddingTable:
    cache = forward_with_cache(g, params, config, dtype)
    return HopEmbeddingTable(cache.op.graph, cache.hops)


def backward(cache: ForwardCache, params: list[LayerParams], config: GNNConfig,
             upstream: list[np.ndarray | None]) -> list[LayerParams]:
    """Parameter gradients given dLoss/dH for any subset of hops (``None`` = zero)."""
    L = config.layers
    if len(upstream) != L + 1:
        raise ValueError(f"need {L + 1} upstream entries (hops 0..L), got {len(upstream)}")
    op = cache.op
    dims = config.dims
    for l, gr in enumerate(upstream):
        if gr is not None and gr.shape != cache.hops[l].shape:
            raise ValueError(f"upstream gradient for hop {l} has shape {gr.shape}, want {cache.hops[l].shape}")
    grads: list[LayerParams] = [None] * L  # type: ignore[list-item]
    g_h = upstream[L] if upstream[L] is not None else np.zeros_like(cache.hops[L])
    for layer in range(L - 1, -1, -1):
        p = params[layer]
        h_in = cache.hops[layer]
        d_in, d_out = dims[layer], dims[layer + 1]
        dpre = g_h * (cache.pre[layer] > 0)
        d_w0 = h_in.T @ dpre
        vcat = p.bases.reshape(config.bases * d_in, d_out)
        d_vcat = cache.z[layer].T @ dpre
        d_z = dpre @ vcat.T
        d_h = dpre @ p.self_weight.T
        d_coeffs = np.zeros_like(p.coeffs)
        for b in range(config.bases):
            dzb = d_z[:, b * d_in:(b + 1) * d_in]
            d_h += cache.mats[layer][b].T @ dzb
            if len(op.src):
                edge_dot = np.einsum("ij,ij->i", dzb[op.dst], h_in[op.src]) * op.norm
                d_coeffs[:, b] = np.bincount(op.etype, weights=edge_dot, minlength=config.num_relations)
        grads[layer] = LayerParams(d_vcat.reshape(config.bases, d_in, d_out), d_coeffs, d_w0)
        if layer > 0:
            g_h = d_h if upstream[layer] is None else d_h + upstream[layer]
    return grads


def reference_forward(g: CircuitGraph, relation_weights: list[np.ndarray], self_weights: list[np.ndarray],
                      ) -> list[np.ndarray]:
    """Unfactored forward pass with independent W_r per relation, node by node."""
    h = g.features.copy()
    hops = [h]
    in_adj = g.in_adjacency
    for w_rel, w0 in zip(relation_weights, self_weights):
        out = np.zeros((g.num_nodes, w0.shape[1]))
        for i in range(g.num_nodes):
            acc = h[i] @ w0
            by_rel: dict[int, list[int]] = {}
            for j, r in in_adj[i]:
                by_rel.setdefault(r, []).append(j)
            for r, js in by_rel.items():
                for j in js:
                    acc = acc + (h[j] @ w_rel[r]) / len(js)
            out[i] = np.maximum(acc, 0.0)
        h = out
        hops.append(h)
    return hops


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k!r} at step {state.t + 1}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state
