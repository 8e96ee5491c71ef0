"""Event data model, bit-exact IO, windowed sampling, and noise injection.

An event is a pixel-change record (x, y, t, p): column, row, microsecond
timestamp, and polarity. Polarity is canonically +1 (brightness up) or -1
(brightness down); external {0, 1} encodings are mapped to {-1, +1} on parse.

Two interchange formats:

* CSV — UTF-8, one ``t,x,y,p`` record per line, `#` comments ignored, a
  single optional header line ``t,x,y,p``. Carries no sensor dims.
* BIN — little-endian: magic ``EVS1``, u16 width, u16 height, u64 count,
  then ``count`` records of {u64 t, u16 x, u16 y, i8 p, 3 pad bytes}.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import (
    CoordinateOutOfBounds,
    EmptyStream,
    MalformedRecord,
    ZeroWindow,
)

MAX_TIMESTAMP = 2**63 - 1  # timestamps must fit in 63 bits so differences stay signed

_BIN_MAGIC = b"EVS1"
_BIN_HEADER = struct.Struct("<4sHHQ")
_BIN_RECORD = struct.Struct("<QHHb3x")


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """A chronologically ordered batch of events from one sensor.

    Arrays share one length; events are sorted non-decreasing by ``t`` with
    source order preserved among ties. Instances are immutable and safe to
    share across workers.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor_width: int
    sensor_height: int
    label: Optional[int] = None

    def __post_init__(self):
        for name in ("x", "y", "t", "p"):
            arr = np.array(getattr(self, name), dtype=np.int64)  # defensive copy
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays must share one length")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if n:
            if self.t.min() < 0 or self.t.max() > MAX_TIMESTAMP:
                raise ValueError("timestamps must be in [0, 2^63)")
            if np.any(np.diff(self.t) < 0):
                raise ValueError("events must be sorted non-decreasing by t")
            if not np.isin(self.p, (-1, 1)).all():
                raise ValueError("polarity must be -1 or +1")
            _check_bounds(self.x, self.y, self.sensor_width, self.sensor_height)

    @classmethod
    def from_events(cls, events, sensor_width, sensor_height, label=None) -> "EventStream":
        events = list(events)
        return cls(
            x=np.array([e.x for e in events], dtype=np.int64),
            y=np.array([e.y for e in events], dtype=np.int64),
            t=np.array([e.t for e in events], dtype=np.int64),
            p=np.array([e.p for e in events], dtype=np.int64),
            sensor_width=sensor_width,
            sensor_height=sensor_height,
            label=label,
        )

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and self.label == other.label
            and len(self) == len(other)
            and bool(np.array_equal(self.x, other.x))
            and bool(np.array_equal(self.y, other.y))
            and bool(np.array_equal(self.t, other.t))
            and bool(np.array_equal(self.p, other.p))
        )

    @property
    def duration(self) -> int:
        """Timestamp span of the stream in microseconds (0 for < 2 events)."""
        return int(self.t[-1] - self.t[0]) if len(self) > 1 else 0

    def with_label(self, label: Optional[int]) -> "EventStream":
        return EventStream(self.x, self.y, self.t, self.p,
                           self.sensor_width, self.sensor_height, label)


@dataclass(frozen=True)
class SampleResult:
    """Outcome of sample_window: the window plus a short-stream flag."""

    stream: EventStream
    short: bool = False


def _check_bounds(x, y, width, height):
    if len(x) == 0:
        return
    if x.min() < 0 or y.min() < 0 or x.max() >= width or y.max() >= height:
        bad = int(np.argmax((x < 0) | (y < 0) | (x >= width) | (y >= height)))
        raise CoordinateOutOfBounds(
            f"event {bad} at ({int(x[bad])}, {int(y[bad])}) outside {width}x{height} sensor"
        )


def _sorted_stably(x, y, t, p, sensor_width, sensor_height, label=None):
    order = np.argsort(t, kind="stable")
    if not np.array_equal(order, np.arange(len(t))):
        x, y, t, p = x[order], y[order], t[order], p[order]
    return EventStream(x, y, t, p, sensor_width, sensor_height, label)


def parse_events(data: bytes, format: str, *,
                 sensor_width: Optional[int] = None,
                 sensor_height: Optional[int] = None) -> EventStream:
    """Decode CSV or BIN bytes into a validated EventStream.

    Unsorted sources are re-sorted stably by t. For CSV, sensor dims may be
    supplied; when absent they are inferred as max coordinate + 1. For BIN
    the header dims win and supplied dims must match if given.
    """
    if format == "csv":
        return _parse_csv(data, sensor_width, sensor_height)
    if format == "bin":
        return _parse_bin(data, sensor_width, sensor_height)
    raise ValueError(f"unknown event format {format!r}")


def _parse_csv(data: bytes, sensor_width, sensor_height) -> EventStream:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRecord(f"not valid UTF-8: {exc}") from exc
    ts, xs, ys, ps = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.replace(" ", "") == "t,x,y,p":
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedRecord(f"expected 4 fields, got {len(parts)}", line=lineno)
        try:
            t, x, y, p = (int(part.strip()) for part in parts)
        except ValueError:
            raise MalformedRecord(f"non-integer field in {line!r}", line=lineno) from None
        if p == 0:
            p = -1
        if p not in (-1, 1):
            raise MalformedRecord(f"polarity {p} not in {{0, 1, -1}}", line=lineno)
        if t < 0 or t > MAX_TIMESTAMP:
            raise MalformedRecord(f"timestamp {t} outside [0, 2^63)", line=lineno)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    if not ts:
        raise EmptyStream("no event records in CSV input")
    x = np.array(xs, dtype=np.int64)
    y = np.array(ys, dtype=np.int64)
    if x.min() < 0 or y.min() < 0:
        raise CoordinateOutOfBounds("negative event coordinate")
    width = sensor_width if sensor_width is not None else int(x.max()) + 1
    height = sensor_height if sensor_height is not None else int(y.max()) + 1
    return _sorted_stably(x, y, np.array(ts, dtype=np.int64),
                          np.array(ps, dtype=np.int64), width, height)


def _parse_bin(data: bytes, sensor_width, sensor_height) -> EventStream:
    if len(data) < _BIN_HEADER.size:
        raise MalformedRecord("truncated header", offset=len(data))
    magic, width, height, count = _BIN_HEADER.unpack_from(data, 0)
    if magic != _BIN_MAGIC:
        raise MalformedRecord(f"bad magic {magic!r}", offset=0)
    if sensor_width is not None and sensor_width != width:
        raise MalformedRecord(f"header width {width} != expected {sensor_width}")
    if sensor_height is not None and sensor_height != height:
        raise MalformedRecord(f"header height {height} != expected {sensor_height}")
    if count == 0:
        raise EmptyStream("BIN payload declares zero events")
    expected = _BIN_HEADER.size + count * _BIN_RECORD.size
    if len(data) < expected:
        raise MalformedRecord(
            f"payload holds {len(data)} bytes, need {expected}", offset=len(data)
        )
    raw = np.frombuffer(
        data, count=count, offset=_BIN_HEADER.size,
        dtype=np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"),
                        ("p", "i1"), ("pad", "V3")]),
    )
    t = raw["t"].astype(np.int64)
    if raw["t"].max() > MAX_TIMESTAMP:
        raise MalformedRecord("timestamp outside [0, 2^63)")
    p = raw["p"].astype(np.int64)
    if not np.isin(p, (-1, 1)).all():
        raise MalformedRecord("polarity byte not -1/+1")
    return _sorted_stably(raw["x"].astype(np.int64), raw["y"].astype(np.int64),
                          t, p, width, height)


def write_events(stream: EventStream, format: str) -> bytes:
    """Encode a stream; parse_events(write_events(s)) round-trips exactly."""
    if format == "csv":
        lines = ["t,x,y,p"]
        lines.extend(
            f"{int(t)},{int(x)},{int(y)},{int(p)}"
            for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p)
        )
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "bin":
        out = bytearray(_BIN_HEADER.pack(_BIN_MAGIC, stream.sensor_width,
                                         stream.sensor_height, len(stream)))
        rec = np.zeros(len(stream), dtype=np.dtype(
            [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")]))
        rec["t"] = stream.t.astype(np.uint64)
        rec["x"] = stream.x.astype(np.uint16)
        rec["y"] = stream.y.astype(np.uint16)
        rec["p"] = stream.p.astype(np.int8)
        out.extend(rec.tobytes())
        return bytes(out)
    raise ValueError(f"unknown event format {format!r}")


def sample_window(stream: EventStream, k: int, start="fixed:0") -> SampleResult:
    """Take k consecutive events.

    ``start`` is "fixed:I" / ("fixed", I) for a pinned start index, or
    "random:SEED" / ("random", SEED) for a seeded uniform start. Windows from
    the same start index nest: the k'-window is a prefix of the k-window for
    k' < k. Streams shorter than k are returned whole with short=True.
    """
    if k <= 0:
        raise ZeroWindow(f"window size must be positive, got {k}")
    policy, value = _parse_start(start)
    n = len(stream)
    if n <= k:
        return SampleResult(stream, short=n < k)
    if policy == "fixed":
        begin = value
        if begin < 0 or begin + k > n:
            raise ValueError(f"fixed start {begin} leaves no room for {k} events of {n}")
    else:
        rng = np.random.default_rng(value)
        begin = int(rng.integers(0, n - k + 1))
    sl = slice(begin, begin + k)
    return SampleResult(EventStream(stream.x[sl], stream.y[sl], stream.t[sl], stream.p[sl],
                                    stream.sensor_width, stream.sensor_height, stream.label))


def _parse_start(start):
    if isinstance(start, tuple):
        policy, value = start
    elif isinstance(start, str):
        policy, _, value = start.partition(":")
        value = int(value) if value else 0
    else:
        raise ValueError(f"bad start policy {start!r}")
    if policy not in ("fixed", "random"):
        raise ValueError(f"start policy must be fixed or random, got {policy!r}")
    return policy, int(value)


def inject_noise(stream: EventStream, fraction: float, seed: int) -> EventStream:
    """Append ceil(fraction * K) uniform spurious events and re-sort stably.

    Injected events draw x, y uniformly over the sensor, p uniformly over
    {-1, +1}, and t uniformly over [t_min, t_max] of the stream. Original
    events keep their relative order among timestamp ties.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"noise fraction must be in [0, 1], got {fraction}")
    n_noise = math.ceil(fraction * len(stream))
    if n_noise == 0:
        return stream
    rng = np.random.default_rng(seed)
    t_lo, t_hi = int(stream.t[0]), int(stream.t[-1])
    nx = rng.integers(0, stream.sensor_width, size=n_noise)
    ny = rng.integers(0, stream.sensor_height, size=n_noise)
    nt = rng.integers(t_lo, t_hi + 1, size=n_noise)
    npol = rng.integers(0, 2, size=n_noise) * 2 - 1
    return _sorted_stably(
        np.concatenate([stream.x, nx]),
        np.concatenate([stream.y, ny]),
        np.concatenate([stream.t, nt]),
        np.concatenate([stream.p, npol]),
        stream.sensor_width, stream.sensor_height, stream.label,
    )
