"""Supervised end-to-end training, evaluation, and experiment drivers.

Training samples one k-event window per labeled stream (seeded random start),
builds graphs once with a dataset-level normalization config, and optimizes
cross-entropy with Adam or SGD-momentum over shuffled mini-batches. All
randomness descends from TrainConfig.seed, so identical inputs produce
byte-identical checkpoints and histories.

Evaluation follows the nested-window protocol: one base window per test
sample (fixed start), sliced to each requested prefix length, optionally
with uniform noise injected per window, classified in eval mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, constant, zero_grads
from .datasets import LabeledDataset, parallel_map
from .errors import BadLabel, DivergedLoss, EmptyTestSet
from .events import EventStream, inject_noise, sample_window
from .graphs import GraphConfig, build_graph
from .network import (
    GraphBatch,
    ModelConfig,
    ModelMeta,
    ModelParams,
    classifier_forward,
    init_model,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"          # "adam" | "sgd-momentum"
    seed: int = 0
    window_k: int = 100
    graph: GraphConfig = GraphConfig("g1", 4)
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch-norm constraint)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float


@dataclass
class EvalReport:
    """Per-window accuracy, per-class accuracy, confusion, and train gap."""

    windows: List[int]
    top1_accuracy: Dict[int, float]
    per_class_accuracy: Dict[int, List[float]]
    confusion: Dict[int, List[List[int]]]
    train_accuracy: float
    train_test_gap: Dict[int, float]
    num_classes: int
    class_names: List[str]
    noise_fraction: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "windows": self.windows,
            "top1_accuracy": {str(k): v for k, v in self.top1_accuracy.items()},
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "confusion": {str(k): v for k, v in self.confusion.items()},
            "train_accuracy": self.train_accuracy,
            "train_test_gap": {str(k): v for k, v in self.train_test_gap.items()},
            "num_classes": self.num_classes,
            "class_names": self.class_names,
            "noise_fraction": self.noise_fraction,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            windows=[int(k) for k in d["windows"]],
            top1_accuracy={int(k): v for k, v in d["top1_accuracy"].items()},
            per_class_accuracy={int(k): v for k, v in d["per_class_accuracy"].items()},
            confusion={int(k): v for k, v in d["confusion"].items()},
            train_accuracy=d["train_accuracy"],
            train_test_gap={int(k): v for k, v in d["train_test_gap"].items()},
            num_classes=d["num_classes"],
            class_names=list(d["class_names"]),
            noise_fraction=d["noise_fraction"],
            seed=d["seed"],
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true classes."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise BadLabel(f"expected {b} labels, got shape {labels.shape}")
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise BadLabel(f"labels must lie in [0, {c})")
    # subtract the (detached) row max for a stable softmax; constant shifts
    # leave both the loss value's gradient and the softmax unchanged
    shift = constant(np.broadcast_to(logits.data.max(axis=1, keepdims=True), (b, c)).copy())
    z = ad.add(logits, ad.scale(shift, -1.0))
    log_norm = ad.log(ad.sum_rows(ad.exp(z)))
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    z_true = ad.sum_rows(ad.hadamard(z, constant(onehot)))
    per_row = ad.add(log_norm, ad.scale(z_true, -1.0))
    total = ad.segment_sum(per_row, np.zeros(b, dtype=np.int64), 1)
    return ad.scale(total, 1.0 / b)


def resolve_graph_config(cfg: GraphConfig, windows: Sequence[EventStream]) -> GraphConfig:
    """Pin None norms to dataset-level constants: the largest sensor dimension
    and the median inter-event gap across training windows.

    One shared temporal divisor preserves absolute event-rate differences
    between classes, and gap scale (rather than window span) keeps normalized
    edge gaps at O(1) where the sigmoid edge gate has usable slope."""
    spatial = cfg.spatial_norm
    if spatial is None:
        spatial = float(max(max(s.sensor_width, s.sensor_height) for s in windows))
    temporal = cfg.temporal_norm
    if temporal is None:
        gaps = [s.duration / max(1, len(s) - 1) for s in windows]
        temporal = float(max(1.0, float(np.median(gaps))))
    return replace(cfg, spatial_norm=spatial, temporal_norm=temporal)


def _window_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def _training_windows(dataset: LabeledDataset, cfg: TrainConfig) -> List[EventStream]:
    return [
        sample_window(s, cfg.window_k, ("random", _window_seed(cfg.seed, 1, i))).stream
        for i, s in enumerate(dataset.train)
    ]


class _Adam:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else 0.0
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _SgdMomentum:
    def __init__(self, params, lr, momentum):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p.data) for p in params]

    def step(self):
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else 0.0
            self.vel[i] = self.momentum * self.vel[i] + g
            p.data -= self.lr * self.vel[i]


def train(model_cfg: ModelConfig, dataset: LabeledDataset, cfg: TrainConfig,
          checkpoint_path=None) -> Tuple[ModelParams, List[EpochStats]]:
    """Train a classifier; deterministic for a given (config, dataset, seed)."""
    if dataset.num_classes < 2:
        raise ValueError("training needs at least 2 classes")
    windows = _training_windows(dataset, cfg)
    graph_cfg = resolve_graph_config(cfg.graph, windows)
    graphs = parallel_map(lambda w: build_graph(w, graph_cfg), windows)
    labels = np.array([s.label for s in dataset.train], dtype=np.int64)

    meta = ModelMeta(
        variant=graph_cfg.variant,
        tau=graph_cfg.tau,
        spatial_norm=graph_cfg.spatial_norm,
        temporal_norm=graph_cfg.temporal_norm,
        window_k=cfg.window_k,
        seed=cfg.seed,
    )
    model = init_model(model_cfg, meta, dataset.num_classes)
    params = model.parameters()
    if cfg.optimizer == "adam":
        opt = _Adam(params, cfg.learning_rate)
    else:
        opt = _SgdMomentum(params, cfg.learning_rate, cfg.momentum)

    shuffle_rng = np.random.default_rng([cfg.seed, 2])
    history: List[EpochStats] = []
    n = len(graphs)
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            batch = [graphs[i] for i in idx]
            with Tape() as tape:
                logits = classifier_forward(model, batch, mode="train")
                loss = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss.data).all():
                raise DivergedLoss(f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}")
            zero_grads(params)
            tape.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        history.append(EpochStats(epoch, loss_sum / n, correct / n))

    if checkpoint_path is not None:
        from .network import save_model
        from pathlib import Path
        Path(checkpoint_path).write_bytes(save_model(model))
    return model, history


def history_to_csv(history: Sequence[EpochStats]) -> str:
    lines = ["epoch,train_loss,train_acc"]
    lines.extend(f"{h.epoch},{h.train_loss!r},{h.train_acc!r}" for h in history)
    return "\n".join(lines) + "\n"


def predict(model: ModelParams, graphs, batch_size: int = 32) -> np.ndarray:
    """Eval-mode class predictions for a list of graphs."""
    out = []
    for lo in range(0, len(graphs), batch_size):
        logits = classifier_forward(model, graphs[lo:lo + batch_size], mode="eval")
        out.append(logits.data.argmax(axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def _accuracy_block(model: ModelParams, streams: List[EventStream],
                    labels: np.ndarray, graph_cfg: GraphConfig):
    graphs = parallel_map(lambda s: build_graph(s, graph_cfg), streams)
    pred = predict(model, graphs)
    c = model.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    for truth, guess in zip(labels, pred):
        confusion[truth, guess] += 1
    acc = float((pred == labels).mean())
    row_totals = confusion.sum(axis=1)
    per_class = [
        float(confusion[i, i] / row_totals[i]) if row_totals[i] else 0.0
        for i in range(c)
    ]
    return acc, per_class, confusion


def evaluate(model: ModelParams, dataset: LabeledDataset, windows: Sequence[int],
             noise_fraction: float = 0.0, seed: int = 0) -> EvalReport:
    """Nested-prefix evaluation on the test split, optionally with noise.

    Never mutates model parameters or batch-norm running statistics.
    """
    if not dataset.test:
        raise EmptyTestSet("dataset has no test samples")
    windows = [int(k) for k in windows]
    if not windows or any(k <= 0 for k in windows):
        raise ValueError("windows must be positive")
    graph_cfg = model.meta.graph_config
    labels = np.array([s.label for s in dataset.test], dtype=np.int64)

    base_k = max(windows)
    bases = [sample_window(s, base_k, ("fixed", 0)).stream for s in dataset.test]
    prefix_sets: Dict[int, List[EventStream]] = {}
    for k in sorted(set(windows), reverse=True):
        prefix_sets[k] = [sample_window(b, k, ("fixed", 0)).stream for b in bases]
    _assert_nested(prefix_sets)

    top1: Dict[int, float] = {}
    per_class: Dict[int, List[float]] = {}
    confusion: Dict[int, List[List[int]]] = {}
    for k in windows:
        streams = prefix_sets[k]
        if noise_fraction > 0.0:
            streams = [
                inject_noise(w, noise_fraction, _window_seed(seed, 3, i, k))
                for i, w in enumerate(streams)
            ]
        acc, pc, conf = _accuracy_block(model, streams, labels, graph_cfg)
        top1[k] = acc
        per_class[k] = pc
        confusion[k] = conf.tolist()

    train_windows = [
        sample_window(s, model.meta.window_k, ("fixed", 0)).stream
        for s in dataset.train
    ]
    train_labels = np.array([s.label for s in dataset.train], dtype=np.int64)
    if train_windows:
        train_acc, _, _ = _accuracy_block(model, train_windows, train_labels, graph_cfg)
    else:
        train_acc = float("nan")

    return EvalReport(
        windows=windows,
        top1_accuracy=top1,
        per_class_accuracy=per_class,
        confusion=confusion,
        train_accuracy=train_acc,
        train_test_gap={k: train_acc - top1[k] for k in windows},
        num_classes=model.num_classes,
        class_names=list(dataset.class_names),
        noise_fraction=noise_fraction,
        seed=seed,
    )


def _assert_nested(prefix_sets: Dict[int, List[EventStream]]) -> None:
    ks = sorted(prefix_sets)
    for small, big in zip(ks, ks[1:]):
        for a, b in zip(prefix_sets[small], prefix_sets[big]):
            n = len(a)
            if n > len(b) or not (
                np.array_equal(a.t, b.t[:n]) and np.array_equal(a.x, b.x[:n])
                and np.array_equal(a.y, b.y[:n]) and np.array_equal(a.p, b.p[:n])
            ):
                raise AssertionError("test windows are not nested prefixes")
