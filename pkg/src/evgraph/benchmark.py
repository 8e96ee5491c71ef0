"""Latency and memory benchmarking for event-to-graph transformation.

Latency cells time only the stream-to-graph conversion; the time spanned by
the events themselves (the cost of collecting them, which is camera physics,
not software) is reported separately per cell as collection_span_us.
Benchmarks run single-worker with a pinned workload order; warm-up builds are
excluded from the statistics.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import TimerTooCoarse
from .events import EventStream, sample_window
from .graphs import (
    EventGraph,
    GraphConfig,
    build_graph,
    build_radius_graph,
    serialize_graph,
)

_WARMUP = 5


@dataclass(frozen=True)
class BuilderSpec:
    """A named graph builder: a variant with tau, or the radius baseline."""

    name: str
    tau: int = 1
    radius: float = 3.0
    cap: int = 8

    @property
    def label(self) -> str:
        if self.name == "radius":
            return f"radius:r={self.radius:g}:cap={self.cap}"
        return f"{self.name}:tau={self.tau}"

    def build(self, stream: EventStream) -> EventGraph:
        if self.name == "radius":
            return build_radius_graph(stream, self.radius, self.cap)
        return build_graph(stream, GraphConfig(self.name, self.tau))


def parse_builders(text: str) -> List[BuilderSpec]:
    """Parse a CLI builder list like "g1:tau=4,radius:r=3:cap=8"."""
    specs = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        name, *opts = token.split(":")
        kwargs: Dict[str, float] = {}
        for opt in opts:
            key, _, value = opt.partition("=")
            kwargs[key.strip()] = value
        if name == "radius":
            specs.append(BuilderSpec(
                "radius",
                radius=float(kwargs.get("r", kwargs.get("radius", 3.0))),
                cap=int(kwargs.get("cap", 8)),
            ))
        elif name in ("g1", "g2", "g3", "g4"):
            specs.append(BuilderSpec(name, tau=int(kwargs.get("tau", 1))))
        else:
            raise ValueError(f"unknown builder {name!r}")
    return specs


@dataclass
class BenchCell:
    builder: str
    window_k: int
    samples: int
    mean_size_bytes: float
    collection_span_us: float
    median_us: Optional[float] = None
    mean_us: Optional[float] = None
    p95_us: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "builder": self.builder,
            "window_k": self.window_k,
            "samples": self.samples,
            "mean_size_bytes": self.mean_size_bytes,
            "collection_span_us": self.collection_span_us,
            "median_us": self.median_us,
            "mean_us": self.mean_us,
            "p95_us": self.p95_us,
        }


@dataclass
class BenchReport:
    cells: List[BenchCell]
    sensor_width: int
    sensor_height: int
    dense_frame_bytes: int

    def to_dict(self) -> dict:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "sensor_width": self.sensor_width,
            "sensor_height": self.sensor_height,
            "dense_frame_bytes": self.dense_frame_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        return cls(
            cells=[BenchCell(**c) for c in d["cells"]],
            sensor_width=d["sensor_width"],
            sensor_height=d["sensor_height"],
            dense_frame_bytes=d["dense_frame_bytes"],
        )

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        return cls.from_dict(json.loads(text))


def _check_timer() -> None:
    if time.get_clock_info("perf_counter").resolution > 1e-6:
        raise TimerTooCoarse("perf_counter resolution is coarser than 1 microsecond")


def _sensor_dims(streams: Sequence[EventStream]):
    return (max(s.sensor_width for s in streams), max(s.sensor_height for s in streams))


def _windows_for(streams, k: int, count: int) -> List[EventStream]:
    return [
        sample_window(streams[i % len(streams)], k, ("fixed", 0)).stream
        for i in range(count)
    ]


def bench_transform(dataset, builders: Sequence[BuilderSpec], windows: Sequence[int],
                    repeats: int = 50) -> BenchReport:
    """Latency (and size) of event-to-graph conversion per (builder, window)."""
    if repeats < 30:
        raise ValueError(f"repeats must be >= 30, got {repeats}")
    _check_timer()
    streams = dataset.all_streams() if hasattr(dataset, "all_streams") else list(dataset)
    w, h = _sensor_dims(streams)
    cells = []
    for spec in builders:
        for k in windows:
            work = _windows_for(streams, k, repeats)
            for wu in work[:_WARMUP]:
                spec.build(wu)
            times_us = np.empty(repeats)
            built = []
            for i, stream in enumerate(work):
                t0 = time.perf_counter_ns()
                g = spec.build(stream)
                times_us[i] = (time.perf_counter_ns() - t0) / 1000.0
                built.append(g)
            sizes = [len(serialize_graph(g)) for g in built]
            cells.append(BenchCell(
                builder=spec.label,
                window_k=int(k),
                samples=repeats,
                mean_size_bytes=float(np.mean(sizes)),
                collection_span_us=float(np.mean([s.duration for s in work])),
                median_us=float(np.median(times_us)),
                mean_us=float(np.mean(times_us)),
                p95_us=float(np.percentile(times_us, 95)),
            ))
    return BenchReport(cells, w, h, dense_frame_bytes=w * h * 4)


def bench_memory(dataset, builders: Sequence[BuilderSpec],
                 windows: Sequence[int]) -> BenchReport:
    """Mean serialized graph size per (builder, window), one window per sample,
    with the dense single-channel frame (w * h * 4 bytes) as the comparator."""
    streams = dataset.all_streams() if hasattr(dataset, "all_streams") else list(dataset)
    w, h = _sensor_dims(streams)
    cells = []
    for spec in builders:
        for k in windows:
            work = [sample_window(s, k, ("fixed", 0)).stream for s in streams]
            sizes = [len(serialize_graph(spec.build(s))) for s in work]
            cells.append(BenchCell(
                builder=spec.label,
                window_k=int(k),
                samples=len(work),
                mean_size_bytes=float(np.mean(sizes)),
                collection_span_us=float(np.mean([s.duration for s in work])),
            ))
    return BenchReport(cells, w, h, dense_frame_bytes=w * h * 4)
