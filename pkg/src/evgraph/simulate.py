"""Frame-to-event simulation and synthetic labeled datasets.

The simulator follows the standard contrast-threshold model: per pixel it
tracks the log photocurrent lambda = log(intensity + eps) and emits an event
whenever the change since the last emitted event at that pixel reaches the
threshold C, with the event's polarity the sign of the change. The reference
level then advances by polarity * C, so one large inter-frame change yields
multiple events.

Frame inputs come from a directory of 8-bit P5 PGM files (lexicographic
order) plus a ``timestamps.txt``, or from a raw ``.frames`` container:
little-endian magic "FRM1", u16 width, u16 height, u32 count, then count
records of {u64 t_us, width*height intensity bytes}.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datasets import LabeledDataset
from .errors import DimensionMismatch, InvalidSpec, TooFewFrames
from .events import EventStream

_FRM_MAGIC = b"FRM1"
_FRM_HEADER = struct.Struct("<4sHHI")

# Treat |change| within one part in 1e9 of a threshold multiple as crossed, so
# crossings landing exactly on k*C survive log/exp rounding.
_CROSSING_SLACK = 1e-9


@dataclass(frozen=True)
class FrameSequence:
    """Grayscale frames in [0, 1] with strictly increasing microsecond stamps."""

    frames: np.ndarray          # (n, height, width) float64
    timestamps: np.ndarray      # (n,) int64 microseconds

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)  # defensive copy
        ts = np.array(self.timestamps, dtype=np.int64)
        if frames.ndim != 3:
            raise DimensionMismatch(f"frames must be (n, h, w), got shape {frames.shape}")
        if len(ts) != frames.shape[0]:
            raise DimensionMismatch(
                f"{frames.shape[0]} frames but {len(ts)} timestamps")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")
        frames.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SimConfig:
    threshold_c: float = 0.2
    log_eps: float = 1e-3
    interpolation: str = "linear"   # "none" | "linear"

    def __post_init__(self):
        if self.threshold_c <= 0:
            raise ValueError("threshold_c must be positive")
        if self.log_eps <= 0:
            raise ValueError("log_eps must be positive")
        if self.interpolation not in ("none", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def simulate_events(seq: FrameSequence, cfg: SimConfig = SimConfig()) -> EventStream:
    """Convert a frame sequence to a chronologically sorted event stream."""
    if len(seq) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(seq)}")
    c = cfg.threshold_c
    h, w = seq.height, seq.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.int64),
                             np.arange(h, dtype=np.int64))
    cols, rows = cols.ravel(), rows.ravel()

    lam_prev = np.log(seq.frames[0].ravel() + cfg.log_eps)
    lam_ref = lam_prev.copy()
    out_x, out_y, out_t, out_p = [], [], [], []

    for f in range(1, len(seq)):
        lam_new = np.log(seq.frames[f].ravel() + cfg.log_eps)
        delta = lam_new - lam_ref
        counts = np.floor(np.abs(delta) / c + _CROSSING_SLACK).astype(np.int64)
        active = np.nonzero(counts)[0]
        if active.size:
            reps = counts[active]
            pol = np.sign(delta[active]).astype(np.int64)
            idx = np.repeat(active, reps)
            pol_rep = np.repeat(pol, reps)
            t_prev, t_next = int(seq.timestamps[f - 1]), int(seq.timestamps[f])
            if cfg.interpolation == "linear":
                # k-th crossing of pixel's linear lambda path within this step
                ends = np.cumsum(reps)
                k = np.arange(ends[-1]) - np.repeat(ends - reps, reps) + 1
                levels = np.repeat(lam_ref[active], reps) + pol_rep * c * k
                rise = lam_new[idx] - lam_prev[idx]
                frac = np.clip((levels - lam_prev[idx]) / rise, 0.0, 1.0)
                t_ev = t_prev + np.rint(frac * (t_next - t_prev)).astype(np.int64)
            else:
                t_ev = np.full(idx.shape, t_next, dtype=np.int64)
            out_x.append(cols[idx])
            out_y.append(rows[idx])
            out_t.append(t_ev)
            out_p.append(pol_rep)
            lam_ref[active] += pol * c * reps
        lam_prev = lam_new

    if not out_x:
        empty = np.empty(0, dtype=np.int64)
        return EventStream(empty, empty, empty, empty, w, h)
    x = np.concatenate(out_x)
    y = np.concatenate(out_y)
    t = np.concatenate(out_t)
    p = np.concatenate(out_p)
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], w, h)


# --- frame IO ---

def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5) 8-bit PGM into a float [0, 1] image."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\S+)", data[pos:])
        if m is None:
            raise ValueError("truncated PGM header")
        tokens.append(m.group(1))
        pos += m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"not a P5 PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM supported")
    pos += 1  # single whitespace byte after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if pixels.size < w * h:
        raise ValueError("truncated PGM payload")
    return pixels.reshape(h, w).astype(np.float64) / maxval


def load_frames(path) -> FrameSequence:
    """Load frames from a PGM directory (with timestamps.txt) or .frames file."""
    path = Path(path)
    if path.is_dir():
        pgms = sorted(path.glob("*.pgm"))
        if not pgms:
            raise TooFewFrames(f"no .pgm files in {path}")
        ts_file = path / "timestamps.txt"
        timestamps = np.array(
            [int(line) for line in ts_file.read_text().split()], dtype=np.int64)
        frames = np.stack([read_pgm(p.read_bytes()) for p in pgms])
        return FrameSequence(frames, timestamps)
    return parse_frames(path.read_bytes())


def parse_frames(data: bytes) -> FrameSequence:
    magic, w, h, n = _FRM_HEADER.unpack_from(data, 0)
    if magic != _FRM_MAGIC:
        raise ValueError(f"bad .frames magic {magic!r}")
    frames = np.empty((n, h, w), dtype=np.float64)
    ts = np.empty(n, dtype=np.int64)
    pos = _FRM_HEADER.size
    rec = 8 + w * h
    if len(data) < pos + n * rec:
        raise ValueError("truncated .frames payload")
    for i in range(n):
        (ts[i],) = struct.unpack_from("<Q", data, pos)
        frames[i] = np.frombuffer(
            data, dtype=np.uint8, count=w * h, offset=pos + 8
        ).reshape(h, w) / 255.0
        pos += rec
    return FrameSequence(frames, ts)


def write_frames(seq: FrameSequence) -> bytes:
    out = bytearray(_FRM_HEADER.pack(_FRM_MAGIC, seq.width, seq.height, len(seq)))
    for i in range(len(seq)):
        out.extend(struct.pack("<Q", int(seq.timestamps[i])))
        out.extend(np.rint(seq.frames[i] * 255).astype(np.uint8).tobytes())
    return bytes(out)


# --- synthetic dataset ---

@dataclass(frozen=True)
class PatternSpec:
    """One synthetic class: a moving pattern with a characteristic speed.

    kind "bar": a vertical bright bar translating horizontally at `speed`
    pixels per frame (wrapping). kind "blob": a Gaussian blob whose center
    oscillates horizontally at `speed` cycles per frame.
    """

    name: str
    kind: str = "bar"
    speed: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    classes: Tuple[PatternSpec, ...] = (
        PatternSpec("bar_slow", "bar", 0.5),
        PatternSpec("bar_fast", "bar", 2.0),
    )
    samples_per_class: int = 50
    width: int = 32
    height: int = 32
    num_frames: int = 32
    frame_dt_us: int = 10_000
    speed_jitter: float = 0.1
    test_fraction: float = 0.2
    # C = 0.6 keeps per-class same-position statistics window-size stable,
    # so classifiers must key on event timing rather than topology counts
    sim: SimConfig = SimConfig(threshold_c=0.6)


def _render_bar(spec: SyntheticSpec, speed: float, phase: float) -> np.ndarray:
    """Anti-aliased 3 px bar sweeping a half-height band, wrapping at the
    border. The bar is slightly sheared (row-dependent phase) so rows cross
    pixel boundaries at staggered times instead of in lockstep bursts."""
    w, h, n = spec.width, spec.height, spec.num_frames
    bar_w = 3.0
    shear = 0.15  # px of horizontal offset per row
    row0, row1 = h // 4, h // 4 + h // 2
    bg, fg = 0.2, 0.8
    frames = np.full((n, h, w), bg)
    cols = np.arange(w)[None, :]
    row_shift = shear * np.arange(row1 - row0)[:, None]
    for f in range(n):
        pos = (phase + speed * f + row_shift) % w
        # fractional coverage of each unit column by [pos, pos + bar_w), wrapped
        cover = np.clip(np.minimum(cols + 1, pos + bar_w) - np.maximum(cols, pos), 0, 1)
        over = pos + bar_w - w
        cover += np.clip(np.minimum(cols + 1, over) - cols, 0, 1)
        frames[f, row0:row1, :] = bg + (fg - bg) * np.clip(cover, 0, 1)
    return frames


def _render_blob(spec: SyntheticSpec, speed: float, phase: float) -> np.ndarray:
    w, h, n = spec.width, spec.height, spec.num_frames
    sigma = max(2.0, w / 12)
    amp = w / 4
    bg, fg = 0.2, 0.8
    yy, xx = np.mgrid[0:h, 0:w]
    frames = np.empty((n, h, w))
    for f in range(n):
        cx = w / 2 + amp * math.sin(2 * math.pi * (speed * f + phase))
        cy = h / 2
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        frames[f] = bg + (fg - bg) * np.exp(-d2 / (2 * sigma**2))
    return frames


_RENDERERS = {"bar": _render_bar, "blob": _render_blob}


def _texture(rng: np.random.Generator, width: int, height: int,
             amp: float = 0.1) -> np.ndarray:
    """Smooth static intensity offset. Additive on purpose: a multiplicative
    texture would cancel out of log-intensity differences, leaving every pixel
    with an identical contrast step and massively tied event timestamps."""
    yy, xx = np.mgrid[0:height, 0:width]
    fx, fy, px, py = rng.uniform(0.5, 2.5, 2).tolist() + rng.uniform(0, 1, 2).tolist()
    return amp * (
        np.sin(2 * np.pi * (fx * xx / width + px))
        * np.sin(2 * np.pi * (fy * yy / height + py))
    )


def make_synthetic_dataset(spec: SyntheticSpec = SyntheticSpec(), seed: int = 0) -> LabeledDataset:
    """Generate a balanced labeled dataset of simulated event streams.

    Deterministic for a given (spec, seed); the train/test split is 80/20 and
    disjoint by sample.
    """
    if len(spec.classes) < 2:
        raise InvalidSpec("need at least 2 classes")
    speed_pair = any(
        a.kind == b.kind and a.speed != b.speed
        for i, a in enumerate(spec.classes) for b in spec.classes[i + 1:]
    )
    if not speed_pair:
        raise InvalidSpec("classes must include a pair of the same kind differing in speed")
    for cls in spec.classes:
        if cls.kind not in _RENDERERS:
            raise InvalidSpec(f"unknown pattern kind {cls.kind!r}")
    if spec.samples_per_class < 1:
        raise InvalidSpec("samples_per_class must be >= 1")

    class_names = [c.name for c in spec.classes]
    if len(set(class_names)) != len(class_names):
        raise InvalidSpec("class names must be unique")
    # label = lexicographic rank of the class name, matching the on-disk layout
    ordered = sorted(spec.classes, key=lambda c: c.name)
    class_names = [c.name for c in ordered]
    timestamps = np.arange(spec.num_frames, dtype=np.int64) * spec.frame_dt_us
    train: List[EventStream] = []
    test: List[EventStream] = []
    for label, cls in enumerate(ordered):
        render = _RENDERERS[cls.kind]
        streams = []
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng([seed, label, i])
            phase = float(rng.uniform(0, spec.width if cls.kind == "bar" else 1.0))
            speed = cls.speed * (1.0 + spec.speed_jitter * float(rng.uniform(-1, 1)))
            frames = np.clip(render(spec, speed, phase)
                             + _texture(rng, spec.width, spec.height), 0.0, 1.0)
            stream = simulate_events(FrameSequence(frames, timestamps), spec.sim)
            streams.append(stream.with_label(label))
        split_rng = np.random.default_rng([seed, 7919, label])
        order = split_rng.permutation(spec.samples_per_class)
        n_test = int(round(spec.test_fraction * spec.samples_per_class))
        test_idx = set(order[:n_test].tolist())
        for i, s in enumerate(streams):
            (test if i in test_idx else train).append(s)
    return LabeledDataset(class_names, train, test)
