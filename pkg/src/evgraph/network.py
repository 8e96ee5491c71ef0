"""Edge-attribute-gated graph transformer, attention pooling, and classifier.

One layer maps per-node features v_i (d_in) to d_out values:

* each incoming neighbor feature is gated elementwise by
  sigmoid(W1 W0 e) where e is the edge's (alpha, beta) attribute pair;
* gated neighbors become keys/values, the target node the query, and a
  per-neighbor softmax of scaled dot products weights the value sum;
* the update is W2 v_i plus the attention-weighted value sum, so a node
  with no incoming edges maps to exactly W2 v_i.

Pooling scores every node with a width-1 layer of the same operator, keeps
the top ceil(ratio * M) by sigmoid score (ties to the lower index), scales
surviving features by their scores, and induces the surviving subgraph.

Parameters are stored transposed relative to the conventional column-vector
notation: a weight of math shape (out, in) lives as an (in, out) array so
row-major feature matrices multiply on the left.

Checkpoints use the TEA1 format: magic "TEA1", u32 line count, that many
length-prefixed UTF-8 key=value lines, then every parameter array in
declaration order as {u8 ndim, ndim x u32 dims, f64 little-endian data}.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant, parameter
from .errors import (
    DimensionMismatch,
    EmptyGraph,
    NonFiniteActivation,
    SingleRowTrainBatch,
)
from .graphs import EventGraph, GraphConfig

_FEATURE_DIM = {"g1": 3, "g2": 3, "g3": 2, "g4": 1, "radius": 3}


def feature_dim(variant: str) -> int:
    return _FEATURE_DIM[variant]


# --- parameter containers ---

@dataclass
class TeaLayerParams:
    """Learnable weights of one attention layer (edge dim fixed at 2)."""

    w0: Tensor  # (2, d_h) edge attrs -> hidden
    w1: Tensor  # (d_h, d_in) hidden -> gate over input features
    wq: Tensor  # (d_in, d_out)
    bq: Tensor  # (1, d_out)
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    w2: Tensor  # (d_in, d_out) skip transform
    use_edge_gate: bool = True

    @property
    def d_in(self) -> int:
        return self.wq.shape[0]

    @property
    def d_out(self) -> int:
        return self.wq.shape[1]

    def tensors(self) -> List[Tensor]:
        return [self.w0, self.w1, self.wq, self.bq, self.wk, self.bk,
                self.wv, self.bv, self.w2]


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def tensors(self) -> List[Tensor]:
        return [self.gamma, self.beta]


@dataclass
class PoolParams:
    scorer: TeaLayerParams  # output width 1
    keep_ratio: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError("keep_ratio must be in (0, 1]")


@dataclass
class LayerBlock:
    tea: TeaLayerParams
    bn: BatchNormState
    pool: Optional[PoolParams] = None


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters (the trained sizes, not the data pipeline)."""

    layer_dims: Tuple[int, ...] = (64, 64)
    hidden_dim: int = 32
    keep_ratio: float = 0.5
    pool_after: Tuple[int, ...] = (0,)   # layer indices followed by pooling
    head_hidden: int = 32
    use_edge_gate: bool = True


@dataclass(frozen=True)
class ModelMeta:
    """Data-pipeline settings frozen into a checkpoint."""

    variant: str = "g1"
    tau: int = 4
    spatial_norm: float = 1.0
    temporal_norm: float = 1.0
    window_k: int = 100
    seed: int = 0

    @property
    def graph_config(self) -> GraphConfig:
        return GraphConfig(self.variant, self.tau, self.spatial_norm, self.temporal_norm)


@dataclass
class ModelParams:
    config: ModelConfig
    meta: ModelMeta
    num_classes: int
    blocks: List[LayerBlock]
    head: List[Tuple[Tensor, Tensor]]

    def parameters(self) -> List[Tensor]:
        out: List[Tensor] = []
        for block in self.blocks:
            out.extend(block.tea.tensors())
            out.extend(block.bn.tensors())
            if block.pool is not None:
                out.extend(block.pool.scorer.tensors())
        for w, b in self.head:
            out.extend([w, b])
        return out

    def _arrays(self) -> List[np.ndarray]:
        """Every stored array (parameters plus running stats), declaration order."""
        out: List[np.ndarray] = []
        for block in self.blocks:
            out.extend(t.data for t in block.tea.tensors())
            out.extend([block.bn.gamma.data, block.bn.beta.data,
                        block.bn.running_mean, block.bn.running_var])
            if block.pool is not None:
                out.extend(t.data for t in block.pool.scorer.tensors())
        for w, b in self.head:
            out.extend([w.data, b.data])
        return out


def _glorot(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (d_in + d_out))
    return parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))


def _init_tea(rng, d_in: int, d_out: int, d_h: int, use_edge_gate: bool) -> TeaLayerParams:
    zeros = lambda n: parameter(np.zeros((1, n)))
    return TeaLayerParams(
        w0=_glorot(rng, 2, d_h),
        w1=_glorot(rng, d_h, d_in),
        wq=_glorot(rng, d_in, d_out), bq=zeros(d_out),
        wk=_glorot(rng, d_in, d_out), bk=zeros(d_out),
        wv=_glorot(rng, d_in, d_out), bv=zeros(d_out),
        w2=_glorot(rng, d_in, d_out),
        use_edge_gate=use_edge_gate,
    )


def _init_bn(dim: int) -> BatchNormState:
    return BatchNormState(
        gamma=parameter(np.ones((1, dim))),
        beta=parameter(np.zeros((1, dim))),
        running_mean=np.zeros((1, dim)),
        running_var=np.ones((1, dim)),
    )


def init_model(config: ModelConfig, meta: ModelMeta, num_classes: int) -> ModelParams:
    """Seeded Glorot-uniform weights, zero biases, unit batch-norm state."""
    rng = np.random.default_rng(meta.seed)
    d_in = feature_dim(meta.variant)
    blocks: List[LayerBlock] = []
    for i, d_out in enumerate(config.layer_dims):
        tea = _init_tea(rng, d_in, d_out, config.hidden_dim, config.use_edge_gate)
        pool = None
        if i in config.pool_after:
            pool = PoolParams(
                scorer=_init_tea(rng, d_out, 1, config.hidden_dim, config.use_edge_gate),
                keep_ratio=config.keep_ratio,
            )
        blocks.append(LayerBlock(tea, _init_bn(d_out), pool))
        d_in = d_out
    head = [
        (_glorot(rng, d_in, config.head_hidden), parameter(np.zeros((1, config.head_hidden)))),
        (_glorot(rng, config.head_hidden, num_classes), parameter(np.zeros((1, num_classes)))),
    ]
    return ModelParams(config, meta, num_classes, blocks, head)


# --- batching ---

@dataclass
class GraphBatch:
    """Disjoint union of graphs: one node table plus a per-node graph id."""

    feats: np.ndarray       # (N, d0) float64
    edges: np.ndarray       # (E, 2) int64
    attrs: np.ndarray       # (E, 2) float64
    graph_ids: np.ndarray   # (N,) int64, sorted
    num_graphs: int
    directed: bool

    @classmethod
    def from_graphs(cls, graphs: Sequence[EventGraph]) -> "GraphBatch":
        if not graphs:
            raise EmptyGraph("empty batch")
        directed = graphs[0].directed
        if any(g.directed != directed for g in graphs):
            raise DimensionMismatch("mixed directed/undirected graphs in one batch")
        feats, edges, attrs, gids = [], [], [], []
        offset = 0
        for gid, g in enumerate(graphs):
            feats.append(g.node_features.astype(np.float64))
            edges.append(g.edges + offset)
            attrs.append(g.edge_attrs.astype(np.float64))
            gids.append(np.full(g.num_nodes, gid, dtype=np.int64))
            offset += g.num_nodes
        return cls(
            feats=np.concatenate(feats),
            edges=np.concatenate(edges),
            attrs=np.concatenate(attrs),
            graph_ids=np.concatenate(gids),
            num_graphs=len(graphs),
            directed=directed,
        )


# --- forward operations ---

def edge_gate(edge_attrs: Tensor, neighbor_feats: Tensor, params: TeaLayerParams) -> Tensor:
    """Gate neighbor features elementwise by sigmoid(edge_attrs W0 W1).

    Rows are edges. With use_edge_gate off this is the identity on the
    neighbor features (the no-edge-attribute ablation).
    """
    if not params.use_edge_gate:
        return neighbor_feats
    if neighbor_feats.shape[1] != params.d_in:
        raise DimensionMismatch(
            f"neighbor feature dim {neighbor_feats.shape[1]} != layer d_in {params.d_in}")
    gate = ad.sigmoid(ad.matmul(ad.matmul(edge_attrs, params.w0), params.w1))
    return ad.hadamard(gate, neighbor_feats)


def _message_lists(edges: np.ndarray, attrs: np.ndarray, directed: bool):
    """Per-message (source, target, attrs), sorted by target for segment ops."""
    if len(edges) == 0:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 2)))
    src, dst = edges[:, 0], edges[:, 1]
    if not directed:  # each stored edge carries messages both ways
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        attrs = np.concatenate([attrs, attrs])
    order = np.argsort(dst, kind="stable")
    return src[order], dst[order], attrs[order]


def _tile_rows(row: Tensor, n: int) -> Tensor:
    return ad.matmul(constant(np.ones((n, 1))), row)


def tea_forward(params: TeaLayerParams, node_feats: Tensor,
                edges: np.ndarray, edge_attrs: np.ndarray,
                directed: bool = True, return_attention: bool = False):
    """One attention layer over the message graph; output is (M, d_out)."""
    if node_feats.shape[1] != params.d_in:
        raise DimensionMismatch(
            f"node feature dim {node_feats.shape[1]} != layer d_in {params.d_in}")
    m = node_feats.shape[0]
    skip = ad.matmul(node_feats, params.w2)
    msg_src, msg_dst, msg_attrs = _message_lists(edges, edge_attrs, directed)
    if len(msg_src) == 0:
        if return_attention:
            return skip, np.empty(0), msg_dst
        return skip

    vbar = edge_gate(constant(msg_attrs), ad.gather_rows(node_feats, msg_src), params)
    queries = ad.add(ad.matmul(node_feats, params.wq), params.bq)
    keys = ad.add(ad.matmul(vbar, params.wk), params.bk)
    values = ad.add(ad.matmul(vbar, params.wv), params.bv)
    dots = ad.sum_rows(ad.hadamard(ad.gather_rows(queries, msg_dst), keys))
    eta = ad.segment_softmax(ad.scale(dots, 1.0 / math.sqrt(params.d_out)), msg_dst)
    weighted = ad.hadamard(ad.matmul(eta, constant(np.ones((1, params.d_out)))), values)
    out = ad.add(skip, ad.segment_sum(weighted, msg_dst, m))
    if return_attention:
        return out, eta.data.ravel().copy(), msg_dst
    return out


def batch_norm(feats: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-column normalization with learnable scale/shift and running stats."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    m, d = feats.shape
    if mode == "train":
        if m < 2:
            raise SingleRowTrainBatch("train-mode batch norm needs >= 2 rows")
        all_zero = np.zeros(m, dtype=np.int64)
        mean = ad.scale(ad.segment_sum(feats, all_zero, 1), 1.0 / m)
        centered = ad.add(feats, ad.scale(mean, -1.0))
        var = ad.scale(ad.segment_sum(ad.hadamard(centered, centered), all_zero, 1), 1.0 / m)
        # 1/sqrt(var + eps) via exp(-0.5 log(.)), keeping the primitive set small
        inv_std = ad.exp(ad.scale(ad.log(ad.add(var, constant(np.full((1, d), state.eps)))), -0.5))
        state.running_mean = ((1 - state.momentum) * state.running_mean
                              + state.momentum * mean.data)
        unbiased = var.data * (m / (m - 1))
        state.running_var = ((1 - state.momentum) * state.running_var
                             + state.momentum * unbiased)
    else:
        mean = constant(state.running_mean)
        centered = ad.add(feats, ad.scale(mean, -1.0))
        inv_std = constant(1.0 / np.sqrt(state.running_var + state.eps))
    normalized = ad.hadamard(centered, _tile_rows(inv_std, m))
    return ad.add(ad.hadamard(normalized, _tile_rows(state.gamma, m)), state.beta)


def sag_pool(node_feats: Tensor, edges: np.ndarray, edge_attrs: np.ndarray,
             pool: PoolParams, graph_ids: Optional[np.ndarray] = None,
             directed: bool = True):
    """Score-and-keep pooling; returns (features, edges, attrs, kept_index).

    Keeps the ceil(keep_ratio * M) top-scored nodes per graph (ties to the
    lower index), multiplies surviving features by their scores, and retains
    only edges with both endpoints surviving (re-indexed, attrs preserved).
    """
    m = node_feats.shape[0]
    if graph_ids is None:
        graph_ids = np.zeros(m, dtype=np.int64)
    z = ad.sigmoid(tea_forward(pool.scorer, node_feats, edges, edge_attrs, directed))
    zd = z.data.ravel()

    kept_parts = []
    for gid in np.unique(graph_ids):
        nodes = np.flatnonzero(graph_ids == gid)
        u = math.ceil(pool.keep_ratio * len(nodes))
        order = np.lexsort((nodes, -zd[nodes]))
        kept_parts.append(np.sort(nodes[order[:u]]))
    kept = np.concatenate(kept_parts)

    masked = ad.hadamard(node_feats, ad.matmul(z, constant(np.ones((1, node_feats.shape[1])))))
    pooled = ad.gather_rows(masked, kept)

    remap = np.full(m, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    if len(edges):
        alive = (remap[edges[:, 0]] >= 0) & (remap[edges[:, 1]] >= 0)
        new_edges = remap[edges[alive]]
        new_attrs = edge_attrs[alive]
    else:
        new_edges = edges
        new_attrs = edge_attrs
    return pooled, new_edges, new_attrs, kept


def global_mean_pool(node_feats: Tensor, graph_ids: np.ndarray,
                     num_graphs: Optional[int] = None) -> Tensor:
    """Arithmetic mean of node rows per graph id; ids must be sorted."""
    if num_graphs is None:
        num_graphs = int(graph_ids.max()) + 1 if len(graph_ids) else 0
    counts = np.bincount(graph_ids, minlength=num_graphs)
    if num_graphs == 0 or counts.min() == 0:
        raise EmptyGraph("a graph in the batch has no surviving nodes")
    sums = ad.segment_sum(node_feats, graph_ids, num_graphs)
    inv = np.repeat(1.0 / counts[:, None], node_feats.shape[1], axis=1)
    return ad.hadamard(sums, constant(inv))


def classifier_forward(model: ModelParams, batch, mode: str = "train") -> Tensor:
    """Full network: stacked attention layers with batch norm, ELU, and
    pooling, then global mean pooling and the fully connected head."""
    if isinstance(batch, (list, tuple)):
        batch = GraphBatch.from_graphs(batch)
    if batch.feats.shape[1] != model.blocks[0].tea.d_in:
        raise DimensionMismatch(
            f"graph feature dim {batch.feats.shape[1]} != model input "
            f"dim {model.blocks[0].tea.d_in}")
    feats = constant(batch.feats)
    edges, attrs, gids = batch.edges, batch.attrs, batch.graph_ids
    for i, block in enumerate(model.blocks):
        feats = tea_forward(block.tea, feats, edges, attrs, batch.directed)
        feats = batch_norm(feats, block.bn, mode)
        feats = ad.elu(feats)
        if not np.isfinite(feats.data).all():
            raise NonFiniteActivation(f"non-finite activation after layer {i}")
        if block.pool is not None:
            feats, edges, attrs, kept = sag_pool(
                feats, edges, attrs, block.pool, gids, batch.directed)
            gids = gids[kept]
    pooled = global_mean_pool(feats, gids, batch.num_graphs)
    h = pooled
    for j, (w, b) in enumerate(model.head):
        h = ad.add(ad.matmul(h, w), b)
        if j < len(model.head) - 1:
            h = ad.elu(h)
    if not np.isfinite(h.data).all():
        raise NonFiniteActivation("non-finite logits")
    return h


# --- checkpoint IO ---

_TEA_MAGIC = b"TEA1"


def _config_lines(model: ModelParams) -> List[str]:
    c, m = model.config, model.meta
    return [
        f"layer_dims={','.join(str(d) for d in c.layer_dims)}",
        f"hidden_dim={c.hidden_dim}",
        f"keep_ratio={c.keep_ratio!r}",
        f"pool_after={','.join(str(i) for i in c.pool_after)}",
        f"head_hidden={c.head_hidden}",
        f"use_edge_gate={int(c.use_edge_gate)}",
        f"variant={m.variant}",
        f"tau={m.tau}",
        f"spatial_norm={m.spatial_norm!r}",
        f"temporal_norm={m.temporal_norm!r}",
        f"window_k={m.window_k}",
        f"seed={m.seed}",
        f"num_classes={model.num_classes}",
        "pool_features=post_activation",
    ]


def save_model(model: ModelParams) -> bytes:
    lines = _config_lines(model)
    out = bytearray(_TEA_MAGIC)
    out.extend(struct.pack("<I", len(lines)))
    for line in lines:
        raw = line.encode("utf-8")
        out.extend(struct.pack("<I", len(raw)))
        out.extend(raw)
    for arr in model._arrays():
        out.extend(struct.pack("<B", arr.ndim))
        out.extend(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.extend(arr.astype("<f8").tobytes())
    return bytes(out)


def load_model(data: bytes) -> ModelParams:
    if data[:4] != _TEA_MAGIC:
        raise ValueError(f"not a TEA1 checkpoint (magic {data[:4]!r})")
    pos = 4
    (n_lines,) = struct.unpack_from("<I", data, pos)
    pos += 4
    kv = {}
    for _ in range(n_lines):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        key, _, value = data[pos:pos + n].decode("utf-8").partition("=")
        kv[key] = value
        pos += n
    config = ModelConfig(
        layer_dims=tuple(int(d) for d in kv["layer_dims"].split(",")),
        hidden_dim=int(kv["hidden_dim"]),
        keep_ratio=float(kv["keep_ratio"]),
        pool_after=tuple(int(i) for i in kv["pool_after"].split(",") if i),
        head_hidden=int(kv["head_hidden"]),
        use_edge_gate=bool(int(kv["use_edge_gate"])),
    )
    meta = ModelMeta(
        variant=kv["variant"],
        tau=int(kv["tau"]),
        spatial_norm=float(kv["spatial_norm"]),
        temporal_norm=float(kv["temporal_norm"]),
        window_k=int(kv["window_k"]),
        seed=int(kv["seed"]),
    )
    model = init_model(config, meta, int(kv["num_classes"]))
    for arr in model._arrays():
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        if shape != arr.shape:
            raise ValueError(f"checkpoint shape {shape} != expected {arr.shape}")
        count = int(np.prod(shape))
        arr[...] = np.frombuffer(data, "<f8", count, pos).reshape(shape)
        pos += 8 * count
    if pos != len(data):
        raise ValueError(f"{len(data) - pos} trailing bytes in checkpoint")
    return model
