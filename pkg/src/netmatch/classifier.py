"""MLP head over [region; target] embeddings, joint training and evaluation."""

from __future__ import annotations

import hashlib
import io
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Mapping as TMapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from scipy.stats import rankdata

from . import embedder, rgcn
from .graph import CircuitGraph, bfs_distances, disjoint_union, induced_subgraph, region_from_distances
from .rgcn import AdamState, GNNConfig, GraphOperator, LayerParams
from .sampler import Sample

EPS = 1e-12
_MAGIC = b"NMMODEL\x00"
_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class MLPParams:
    w1: np.ndarray  # (in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # shape (1,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]


def init_mlp(input_dim: int, hidden: int, rng: np.random.Generator) -> MLPParams:
    b1 = np.sqrt(6.0 / (input_dim + hidden))
    b2 = np.sqrt(6.0 / (hidden + 1))
    return MLPParams(rng.uniform(-b1, b1, (input_dim, hidden)), np.zeros(hidden),
                     rng.uniform(-b2, b2, hidden), np.zeros(1))


def squash(x: np.ndarray) -> np.ndarray:
    """log(1 + x) of the pooled sums, which are non-negative but span several decades."""
    return np.log1p(np.maximum(x, 0.0))


def squash_grad(x: np.ndarray) -> np.ndarray:
    return (x >= 0) / (1.0 + np.maximum(x, 0.0))


def mlp_logits(x: np.ndarray, p: MLPParams):
    u = squash(x)
    a1 = u @ p.w1 + p.b1
    h1 = np.maximum(a1, 0.0)
    return h1 @ p.w2 + p.b2[0], (u, a1, h1)


def mlp_forward(x: np.ndarray, p: MLPParams):
    z, cache = mlp_logits(x, p)
    return expit(z), cache


def predict(h_region: np.ndarray, h_target: np.ndarray, mlp: MLPParams) -> float:
    h_region, h_target = np.asarray(h_region, float), np.asarray(h_target, float)
    if h_region.shape != h_target.shape or 2 * len(h_region) != mlp.input_dim:
        raise ValueError(f"embedding lengths {len(h_region)}/{len(h_target)} do not fit an MLP of width {mlp.input_dim}")
    return float(mlp_forward(np.concatenate([h_region, h_target])[None, :], mlp)[0][0])


def bce_loss(y: np.ndarray, p: np.ndarray, eps: float = EPS) -> float:
    y, p = np.asarray(y, float), np.asarray(p, float)
    return float(-np.mean(y * np.log(np.maximum(p, eps)) + (1 - y) * np.log(np.maximum(1 - p, eps))))


def bce_from_logits(y: np.ndarray, z: np.ndarray) -> float:
    """Same value as ``bce_loss(y, sigmoid(z))`` while sigmoid(z) stays inside [eps, 1 - eps],
    but finite and smooth everywhere, so saturated mistakes keep a gradient."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass
class Model:
    config: GNNConfig
    gnn: list[LayerParams]
    mlp: MLPParams

    @property
    def mlp_hidden(self) -> int:
        return self.mlp.w1.shape[1]

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for l, p in enumerate(self.gnn):
            for k, a in p.arrays().items():
                out[f"gnn.{l}.{k}"] = a
        for k, a in self.mlp.arrays().items():
            out[f"mlp.{k}"] = a
        return out

    def structure(self) -> dict:
        c = asdict(self.config)
        c.pop("seed")
        c["mlp_hidden"] = self.mlp_hidden
        return c

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.structure(), sort_keys=True).encode()).hexdigest()

    def to_bytes(self) -> bytes:
        arrays = self.named_arrays()
        header = json.dumps({
            "config": asdict(self.config), "mlp_hidden": self.mlp_hidden,
            "arrays": [[k, list(a.shape)] for k, a in arrays.items()],
        }, sort_keys=True).encode()
        payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
        return (_MAGIC + struct.pack("<II", _VERSION, len(header)) + header
                + hashlib.sha256(payload).digest() + struct.pack("<Q", len(payload)) + payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        buf = io.BytesIO(data)
        if buf.read(8) != _MAGIC:
            raise ModelFileError("not a model file")
        try:
            version, hlen = struct.unpack("<II", buf.read(8))
            if version != _VERSION:
                raise ModelFileError(f"unsupported model version {version}")
            header = json.loads(buf.read(hlen))
            digest = buf.read(32)
            (plen,) = struct.unpack("<Q", buf.read(8))
            payload = buf.read(plen)
        except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ModelFileError(f"truncated or corrupt model file: {e}") from None
        if len(payload) != plen or hashlib.sha256(payload).digest() != digest:
            raise ModelFileError("model payload checksum mismatch")
        config = GNNConfig(**header["config"])
        model = init_model(config, header["mlp_hidden"])
        arrays = model.named_arrays()
        if [[k, list(a.shape)] for k, a in arrays.items()] != header["arrays"]:
            raise ModelFileError("array layout does not match the configuration")
        off = 0
        for a in arrays.values():
            n = a.size * 8
            a[...] = np.frombuffer(payload, dtype="<f8", count=a.size, offset=off).reshape(a.shape)
            off += n
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def target_embedding(self, target: CircuitGraph) -> np.ndarray:
        return embedder.target_embedding(target, self.gnn, self.config)


def init_model(config: GNNConfig, mlp_hidden: int = 64, rng: np.random.Generator | None = None) -> Model:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    gnn = rgcn.init_params(config, rng)
    return Model(config, gnn, init_mlp(2 * config.embedding_dim, mlp_hidden, rng))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    mlp_hidden: int = 64
    through_rails: bool = False


@dataclass
class TrainReport:
    seed: int
    config: dict
    losses: list[float] = field(default_factory=list)
    evaluation: dict = field(default_factory=dict)
    sample_counts: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_json(self, timings: bool = False) -> dict:
        d = {"seed": self.seed, "config": self.config, "losses": self.losses,
             "final_loss": self.losses[-1] if self.losses else None,
             "evaluation": self.evaluation, "sample_counts": self.sample_counts}
        if timings:
            d["seconds"] = self.seconds
        return d


class TrainingProblem:
    """All samples and targets packed into one disjoint-union graph.

    Each host contributes only the union of its sample balls: pooled values
    never depend on anything outside a ball, so the cut changes nothing.
    """

    def __init__(self, samples: Sequence[Sample], hosts: TMapping[str, CircuitGraph],
                 targets: TMapping[str, CircuitGraph], config: GNNConfig, through_rails: bool = False):
        if not samples:
            raise ValueError("empty sample set")
        self.config = config
        self.target_ids = sorted({s.target_id for s in samples})
        missing = [t for t in self.target_ids if t not in targets]
        if missing:
            raise KeyError(f"samples refer to unknown targets {missing}")
        L = config.layers

        by_host: dict[str, list[int]] = {}
        balls: list[dict[int, int]] = []
        for i, s in enumerate(samples):
            g = s.graph if s.graph is not None else hosts[s.host]
            balls.append(bfs_distances(g, s.center, s.K, through_rails))
            if s.graph is None:
                by_host.setdefault(s.host, []).append(i)

        parts: list[CircuitGraph] = []
        local: list[dict[int, int] | None] = [None] * len(samples)
        part_of = [0] * len(samples)
        for hid, idx in by_host.items():
            nodes = sorted(set().union(*(balls[i] for i in idx)))
            parts.append(induced_subgraph(hosts[hid], nodes))
            remap = {v: k for k, v in enumerate(nodes)}
            for i in idx:
                local[i] = remap
                part_of[i] = len(parts) - 1
        for i, s in enumerate(samples):
            if s.graph is not None:
                parts.append(s.graph)
                local[i] = None
                part_of[i] = len(parts) - 1
        first_target = len(parts)
        parts.extend(targets[t] for t in self.target_ids)
        union, offsets = disjoint_union(parts)
        self.union = union
        self.op = GraphOperator(union, config.num_relations)

        regions = []
        for i, s in enumerate(samples):
            off = int(offsets[part_of[i]])
            remap = local[i]
            dist = {(remap[v] if remap else v) + off: d for v, d in balls[i].items()}
            regions.append(region_from_distances(off + (remap[s.center] if remap else s.center), s.K, L, dist))
        self.P = embedder.pooling_matrices(regions, union.num_nodes, L)

        t_rows = []
        for j in range(len(self.target_ids)):
            off = int(offsets[first_target + j])
            t_rows.append(np.arange(off, off + parts[first_target + j].num_nodes))
        indptr = np.concatenate([[0], np.cumsum([len(r) for r in t_rows])])
        cols = np.concatenate(t_rows)
        tmat = sp.csr_matrix((np.ones(len(cols)), cols, indptr), shape=(len(t_rows), union.num_nodes))
        self.T = [tmat] * (L + 1)
        self.t_index = np.array([self.target_ids.index(s.target_id) for s in samples])
        self.labels = np.array([float(s.label) for s in samples])
        self.kinds = [s.kind for s in samples]

    def __len__(self) -> int:
        return len(self.labels)

    def loss_and_grads(self, model: Model, rows: np.ndarray | None = None, need_grads: bool = True):
        cfg = self.config
        cache = rgcn.forward_with_cache(self.op, model.gnn, cfg)
        P = self.P if rows is None else [m[rows] for m in self.P]
        tidx = self.t_index if rows is None else self.t_index[rows]
        y = self.labels if rows is None else self.labels[rows]
        e_r = np.hstack([m @ h for m, h in zip(P, cache.hops)])
        e_t = np.hstack([m @ h for m, h in zip(self.T, cache.hops)])
        x = np.hstack([e_r, e_t[tidx]])
        z, (u, a1, h1) = mlp_logits(x, model.mlp)
        p = expit(z)
        loss = bce_from_logits(y, z)
        if not need_grads:
            return loss, p, None
        dz = (p - y) / len(y)
        mlp = model.mlp
        g = {"mlp.w2": h1.T @ dz, "mlp.b2": np.array([dz.sum()])}
        da1 = np.outer(dz, mlp.w2) * (a1 > 0)
        g["mlp.w1"] = u.T @ da1
        g["mlp.b1"] = da1.sum(axis=0)
        dx = (da1 @ mlp.w1.T) * squash_grad(x)
        D = cfg.embedding_dim
        d_er, d_et_rows = dx[:, :D], dx[:, D:]
        sel = sp.csr_matrix((np.ones(len(tidx)), (tidx, np.arange(len(tidx)))), shape=(len(self.target_ids), len(tidx)))
        d_et = sel @ d_et_rows
        upstream: list[np.ndarray | None] = [None]
        start = cfg.dims[0]
        for l in range(1, cfg.layers + 1):
            w = cfg.dims[l]
            upstream.append(P[l].T @ d_er[:, start:start + w] + self.T[l].T @ d_et[:, start:start + w])
            start += w
        for l, lp in enumerate(rgcn.backward(cache, model.gnn, cfg, upstream)):
            for k, a in lp.arrays().items():
                g[f"gnn.{l}.{k}"] = a
        return loss, p, g


def train(hosts: TMapping[str, CircuitGraph], targets: TMapping[str, CircuitGraph], samples: Sequence[Sample],
          gnn_config: GNNConfig = GNNConfig(), config: TrainConfig = TrainConfig(),
          model: Model | None = None, log=None) -> tuple[Model, TrainReport]:
    """Adam on the mean BCE over all (region, target) pairs; GNN and MLP move together."""
    t0 = time.perf_counter()
    problem = TrainingProblem(samples, hosts, targets, gnn_config, config.through_rails)
    model = init_model(gnn_config, config.mlp_hidden) if model is None else model
    params = model.named_arrays()
    state = AdamState()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7472]))
    report = TrainReport(config.seed, {"gnn": asdict(gnn_config), "train": asdict(config)})
    for kind in sorted(set(problem.kinds)):
        report.sample_counts[kind] = problem.kinds.count(kind)
    n = len(problem)
    if config.epochs == 0:
        report.losses.append(problem.loss_and_grads(model, need_grads=False)[0])
    for epoch in range(config.epochs):
        if config.batch_size and config.batch_size < n:
            order = rng.permutation(n)
            batches = [np.sort(order[i:i + config.batch_size]) for i in range(0, n, config.batch_size)]
        else:
            batches = [None]
        total = 0.0
        for rows in batches:
            loss, _, grads = problem.loss_and_grads(model, rows)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            rgcn.adam_step(params, grads, state, lr=config.lr)
            total += loss * (n if rows is None else len(rows))
        report.losses.append(total / n)
        if log is not None:
            log(epoch, report.losses[-1])
    report.seconds = time.perf_counter() - t0
    return model, report


def auroc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Rank-sum AUROC; tied scores count one half."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(labels: Sequence[int], scores: Sequence[float], threshold: float = 0.5) -> float:
    y = np.asarray(labels, dtype=bool)
    return float(np.mean((np.asarray(scores) >= threshold) == y))


def score_samples(model: Model, samples: Sequence[Sample], hosts: TMapping[str, CircuitGraph],
                  targets: TMapping[str, CircuitGraph], through_rails: bool = False) -> np.ndarray:
    """p-hat for each sample, through the whole-graph table of its host (inference path)."""
    L = model.config.layers
    out = np.zeros(len(samples))
    t_emb = {t: model.target_embedding(targets[t]) for t in sorted({s.target_id for s in samples})}
    groups: dict[object, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(id(s.graph) if s.graph is not None else s.host, []).append(i)
    for idx in groups.values():
        first = samples[idx[0]]
        g = first.graph if first.graph is not None else hosts[first.host]
        table = rgcn.forward(g, model.gnn, model.config)
        regions = [region_from_distances(samples[i].center, samples[i].K, L,
                                         bfs_distances(g, samples[i].center, samples[i].K, through_rails))
                   for i in idx]
        e_r = embedder.embed_regions(table, regions)
        e_t = np.stack([t_emb[samples[i].target_id] for i in idx])
        out[idx] = mlp_forward(np.hstack([e_r, e_t]), model.mlp)[0]
    return out


def evaluate(model: Model, samples: Sequence[Sample], hosts: TMapping[str, CircuitGraph],
             targets: TMapping[str, CircuitGraph], through_rails: bool = False) -> dict[str, dict]:
    """Accuracy at 0.5 and AUROC per target."""
    scores = score_samples(model, samples, hosts, targets, through_rails)
    out = {}
    for t in sorted({s.target_id for s in samples}):
        idx = [i for i, s in enumerate(samples) if s.target_id == t]
        y = [samples[i].label for i in idx]
        sc = scores[idx]
        out[t] = {"accuracy": accuracy(y, sc), "auroc": auroc(y, sc),
                  "positives": int(sum(y)), "negatives": len(y) - int(sum(y))}
    return out
