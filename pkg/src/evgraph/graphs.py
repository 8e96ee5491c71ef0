"""Event-stream to graph transformation and compact graph serialization.

One node per event, in stream order. Two kinds of directed edges:

* chain edges — every event links to its immediate successor in the record
  order, carrying (alpha, beta) = (spatial distance, temporal distance);
* same-position edges — every event links to its next up-to-tau successors
  at the identical pixel, carrying (0, beta). The "temporal degree" tau
  bounds how many such successors are linked. A same-position successor that
  is also the chain successor is not duplicated.

Variants: g1 directed with (x, y, p) node features; g2 the same connectivity
treated as undirected; g3 drops the polarity feature; g4 keeps only polarity.
A radius-neighborhood builder (mutual nearest neighbors within a normalized
space-time radius) serves as the baseline representation.

Graphs serialize to the GRF1 format: little-endian magic "GRF1", u8 variant,
u8 directed, u16 tau, u32 node count M, u32 edge count E, u8 feature dim,
then M x d0 f32 features, M x 2 u16 positions, (M+1) u32 CSR offsets by
source, E u32 destinations, E x 2 f32 edge attributes, and an optional u16
label. Size is linear in M + E and independent of sensor resolution.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import BadMagic, EmptyStream, TruncatedPayload
from .events import EventStream

VARIANTS = ("g1", "g2", "g3", "g4", "radius")
_VARIANT_CODE = {"radius": 0, "g1": 1, "g2": 2, "g3": 3, "g4": 4}
_CODE_VARIANT = {v: k for k, v in _VARIANT_CODE.items()}
_FEATURE_DIM = {"g1": 3, "g2": 3, "g3": 2, "g4": 1, "radius": 3}

_GRF_MAGIC = b"GRF1"
_GRF_HEADER = struct.Struct("<4sBBHIIB")


@dataclass(frozen=True)
class GraphConfig:
    """Construction settings. None norms resolve per stream: spatial to the
    larger sensor dimension, temporal to the window's timestamp span."""

    variant: str = "g1"
    tau: int = 1
    spatial_norm: Optional[float] = None
    temporal_norm: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        min_tau = 0 if self.variant == "radius" else 1
        if self.tau < min_tau:
            raise ValueError(f"tau must be >= {min_tau} for {self.variant}")
        for name in ("spatial_norm", "temporal_norm"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")

    def resolve(self, stream: EventStream) -> "GraphConfig":
        """Pin both norms against a concrete stream."""
        return replace(
            self,
            spatial_norm=self.spatial_norm
            if self.spatial_norm is not None
            else float(max(stream.sensor_width, stream.sensor_height)),
            temporal_norm=self.temporal_norm
            if self.temporal_norm is not None
            else float(max(stream.duration, 1)),
        )


@dataclass(frozen=True)
class EventGraph:
    node_features: np.ndarray   # (M, d0) float32
    node_positions: np.ndarray  # (M, 2) int64 raw pixel coords, kept for tooling
    edges: np.ndarray           # (E, 2) int64 (src, dst) pairs
    edge_attrs: np.ndarray      # (E, 2) float32 columns (alpha, beta)
    directed: bool
    config: GraphConfig
    label: Optional[int] = None

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]


@dataclass(frozen=True)
class GraphStats:
    num_nodes: int
    num_edges: int
    num_chain_edges: int
    num_same_pos_edges: int
    serialized_size_bytes: int


def _node_features(stream: EventStream, variant: str, s_norm: float) -> np.ndarray:
    xs = stream.x / s_norm
    ys = stream.y / s_norm
    ps = stream.p.astype(np.float64)
    if variant in ("g1", "g2", "radius"):
        feats = np.column_stack([xs, ys, ps])
    elif variant == "g3":
        feats = np.column_stack([xs, ys])
    else:  # g4
        feats = ps[:, None]
    return feats.astype(np.float32)


def build_graph(stream: EventStream, cfg: GraphConfig = GraphConfig()) -> EventGraph:
    """Transform a non-empty stream into the configured graph variant."""
    if cfg.variant == "radius":
        raise ValueError("use build_radius_graph for the radius baseline")
    k = len(stream)
    if k == 0:
        raise EmptyStream("cannot build a graph from an empty stream")
    cfg = cfg.resolve(stream)
    s_norm, t_norm = cfg.spatial_norm, cfg.temporal_norm

    # chain edges i-1 -> i
    chain_src = np.arange(k - 1, dtype=np.int64)
    chain_dst = chain_src + 1
    dx = np.diff(stream.x)
    dy = np.diff(stream.y)
    chain_alpha = np.hypot(dx, dy) / s_norm
    chain_beta = np.diff(stream.t) / t_norm

    # same-position edges: within each pixel's event list (index-ordered),
    # link each event to its next up-to-tau successors
    pos_id = stream.x * np.int64(stream.sensor_height) + stream.y
    order = np.argsort(pos_id, kind="stable")
    grp = pos_id[order]
    sp_src_parts, sp_dst_parts = [], []
    for off in range(1, cfg.tau + 1):
        if off >= k:
            break
        same = grp[:-off] == grp[off:]
        src = order[:-off][same]
        dst = order[off:][same]
        keep = dst != src + 1  # chain edge already covers the adjacent pair
        sp_src_parts.append(src[keep])
        sp_dst_parts.append(dst[keep])
    if sp_src_parts:
        sp_src = np.concatenate(sp_src_parts)
        sp_dst = np.concatenate(sp_dst_parts)
        sp_beta = (stream.t[sp_dst] - stream.t[sp_src]) / t_norm
        src_all = np.concatenate([chain_src, sp_src])
        dst_all = np.concatenate([chain_dst, sp_dst])
        alpha_all = np.concatenate([chain_alpha, np.zeros(len(sp_src))])
        beta_all = np.concatenate([chain_beta, sp_beta])
    else:
        src_all, dst_all = chain_src, chain_dst
        alpha_all, beta_all = chain_alpha, chain_beta

    edge_order = np.lexsort((dst_all, src_all))
    edges = np.column_stack([src_all[edge_order], dst_all[edge_order]])
    attrs = np.column_stack([alpha_all[edge_order], beta_all[edge_order]]).astype(np.float32)

    return EventGraph(
        node_features=_node_features(stream, cfg.variant, s_norm),
        node_positions=np.column_stack([stream.x, stream.y]),
        edges=edges,
        edge_attrs=attrs,
        directed=cfg.variant != "g2",
        config=cfg,
        label=stream.label,
    )


def build_radius_graph(stream: EventStream, radius: float, max_degree: int,
                       cfg: GraphConfig = GraphConfig(variant="radius", tau=0)) -> EventGraph:
    """Baseline: undirected mutual-nearest-neighbor graph within a radius.

    Distance is Euclidean in normalized (x, y, t). Each node proposes its
    max_degree nearest in-radius neighbors; an edge survives only when both
    endpoints propose each other, so every node's degree stays <= max_degree.
    """
    k = len(stream)
    if k == 0:
        raise EmptyStream("cannot build a graph from an empty stream")
    if radius <= 0 or max_degree < 1:
        raise ValueError("radius must be positive and max_degree >= 1")
    cfg = replace(cfg, variant="radius", tau=0).resolve(stream)
    s_norm, t_norm = cfg.spatial_norm, cfg.temporal_norm

    xs = stream.x / s_norm
    ys = stream.y / s_norm
    ts = stream.t / t_norm
    d2 = (
        (xs[:, None] - xs[None, :]) ** 2
        + (ys[:, None] - ys[None, :]) ** 2
        + (ts[:, None] - ts[None, :]) ** 2
    )
    within = d2 <= radius * radius
    np.fill_diagonal(within, False)

    masked = np.where(within, d2, np.inf)
    nearest = np.argsort(masked, axis=1, kind="stable")  # ties fall to lower index
    proposes = np.zeros((k, k), dtype=bool)
    rows = np.repeat(np.arange(k), min(max_degree, k - 1))
    cols = nearest[:, : min(max_degree, k - 1)].ravel()
    proposes[rows, cols] = within[rows, cols]
    mutual = proposes & proposes.T

    src, dst = np.nonzero(np.triu(mutual, 1))
    spatial = np.hypot(stream.x[dst] - stream.x[src], stream.y[dst] - stream.y[src]) / s_norm
    temporal = np.abs(stream.t[dst] - stream.t[src]) / t_norm
    return EventGraph(
        node_features=_node_features(stream, "radius", s_norm),
        node_positions=np.column_stack([stream.x, stream.y]),
        edges=np.column_stack([src, dst]).astype(np.int64),
        edge_attrs=np.column_stack([spatial, temporal]).astype(np.float32),
        directed=False,
        config=cfg,
        label=stream.label,
    )


def graph_stats(g: EventGraph) -> GraphStats:
    """Exact node/edge counts and the serialized GRF1 byte size."""
    if g.num_edges:
        chain = int(np.count_nonzero(g.edges[:, 1] == g.edges[:, 0] + 1))
    else:
        chain = 0
    return GraphStats(
        num_nodes=g.num_nodes,
        num_edges=g.num_edges,
        num_chain_edges=chain,
        num_same_pos_edges=g.num_edges - chain,
        serialized_size_bytes=len(serialize_graph(g)),
    )


def serialize_graph(g: EventGraph) -> bytes:
    m, e = g.num_nodes, g.num_edges
    d0 = g.node_features.shape[1]
    if g.node_positions.size and int(g.node_positions.max()) > 0xFFFF:
        raise ValueError("node positions exceed the u16 range of GRF1")
    src = g.edges[:, 0] if e else np.empty(0, dtype=np.int64)
    dst = g.edges[:, 1] if e else np.empty(0, dtype=np.int64)
    attrs = g.edge_attrs
    if e and np.any(np.diff(src) < 0):  # canonicalize to CSR order by source
        order = np.lexsort((dst, src))
        src, dst, attrs = src[order], dst[order], attrs[order]
    offsets = np.zeros(m + 1, dtype=np.uint32)
    if e:
        offsets[1:] = np.cumsum(np.bincount(src, minlength=m))
    out = bytearray(_GRF_HEADER.pack(
        _GRF_MAGIC, _VARIANT_CODE[g.config.variant], int(g.directed),
        g.config.tau, m, e, d0))
    out.extend(g.node_features.astype("<f4").tobytes())
    out.extend(g.node_positions.astype("<u2").tobytes())
    out.extend(offsets.astype("<u4").tobytes())
    out.extend(dst.astype("<u4").tobytes())
    out.extend(attrs.astype("<f4").tobytes())
    if g.label is not None:
        out.extend(struct.pack("<H", g.label))
    return bytes(out)


def deserialize_graph(data: bytes) -> EventGraph:
    """Inverse of serialize_graph. Norms are reported as 1.0 because stored
    features and attributes are already normalized."""
    if len(data) < _GRF_HEADER.size:
        raise TruncatedPayload(f"{len(data)} bytes is shorter than the header")
    magic, vcode, directed, tau, m, e, d0 = _GRF_HEADER.unpack_from(data, 0)
    if magic != _GRF_MAGIC:
        raise BadMagic(f"expected GRF1, got {magic!r}")
    if vcode not in _CODE_VARIANT:
        raise TruncatedPayload(f"unknown variant code {vcode}")
    body = _GRF_HEADER.size + 4 * m * d0 + 4 * m + 4 * (m + 1) + 4 * e + 8 * e
    if len(data) < body:
        raise TruncatedPayload(f"need {body} bytes, got {len(data)}")
    if len(data) - body not in (0, 2):
        raise TruncatedPayload(f"{len(data) - body} trailing bytes")

    pos = _GRF_HEADER.size
    feats = np.frombuffer(data, "<f4", m * d0, pos).reshape(m, d0).astype(np.float32)
    pos += 4 * m * d0
    positions = np.frombuffer(data, "<u2", m * 2, pos).reshape(m, 2).astype(np.int64)
    pos += 4 * m
    offsets = np.frombuffer(data, "<u4", m + 1, pos).astype(np.int64)
    pos += 4 * (m + 1)
    dst = np.frombuffer(data, "<u4", e, pos).astype(np.int64)
    pos += 4 * e
    attrs = np.frombuffer(data, "<f4", e * 2, pos).reshape(e, 2).astype(np.float32)
    pos += 8 * e
    label = struct.unpack_from("<H", data, pos)[0] if len(data) - body == 2 else None

    counts = np.diff(offsets)
    if counts.min(initial=0) < 0 or (int(offsets[-1]) != e):
        raise TruncatedPayload("inconsistent adjacency offsets")
    src = np.repeat(np.arange(m, dtype=np.int64), counts)
    variant = _CODE_VARIANT[vcode]
    return EventGraph(
        node_features=feats,
        node_positions=positions,
        edges=np.column_stack([src, dst]) if e else np.empty((0, 2), dtype=np.int64),
        edge_attrs=attrs,
        directed=bool(directed),
        config=GraphConfig(variant, tau, 1.0, 1.0),
        label=label,
    )
