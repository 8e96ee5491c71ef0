"""Labeled event datasets on disk and in memory.

On-disk layout: ``<root>/<class_name>/<sample>.{csv|bin}``. Class ids are the
lexicographic rank of the class directory names. ``EVG_THREADS`` caps the
worker pool used for parallel parsing; parsing shares no mutable state so
results are independent of schedule.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import EmptyStream
from .events import EventStream, parse_events, write_events


def worker_count() -> int:
    """Worker parallelism cap: EVG_THREADS if set, else the CPU count."""
    env = os.environ.get("EVG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map over a worker pool (sequential when capped at 1)."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class LabeledDataset:
    """Event streams with class labels and a train/test split by sample."""

    class_names: List[str]
    train: List[EventStream]
    test: List[EventStream]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def all_streams(self) -> List[EventStream]:
        return list(self.train) + list(self.test)


def load_dataset_dir(root, *, split_seed: int = 0, test_fraction: float = 0.2) -> LabeledDataset:
    """Load a dataset directory and split it 80/20, disjoint by sample.

    The split permutes each class's (sorted) sample list with a seeded RNG, so
    it is deterministic for a given (directory, seed).
    """
    root = Path(root)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise EmptyStream(f"no class directories under {root}")
    class_names = [d.name for d in class_dirs]

    def load_one(args):
        path, label = args
        fmt = "bin" if path.suffix == ".bin" else "csv"
        return parse_events(path.read_bytes(), fmt).with_label(label)

    train: List[EventStream] = []
    test: List[EventStream] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix in (".csv", ".bin"))
        if not files:
            raise EmptyStream(f"class directory {class_dir} holds no samples")
        streams = parallel_map(load_one, [(p, label) for p in files])
        rng = np.random.default_rng([split_seed, label])
        order = rng.permutation(len(streams))
        n_test = int(round(test_fraction * len(streams)))
        test_idx = set(order[:n_test].tolist())
        for i, s in enumerate(streams):
            (test if i in test_idx else train).append(s)
    return LabeledDataset(class_names, train, test)


def save_dataset_dir(dataset: LabeledDataset, root, *, format: str = "bin") -> None:
    """Write every stream under <root>/<class_name>/<index>.<format>."""
    root = Path(root)
    counters = [0] * dataset.num_classes
    for stream in dataset.all_streams():
        name = dataset.class_names[stream.label]
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        path = class_dir / f"{counters[stream.label]:04d}.{format}"
        counters[stream.label] += 1
        path.write_bytes(write_events(stream, format))
