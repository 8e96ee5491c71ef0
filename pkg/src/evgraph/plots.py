"""Figure rendering for training histories, evaluation reports, and benchmarks.

Every report-writing CLI path calls into here so each delimited/JSON output
gains companion PNG figures. Uses the Agg backend; safe headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def save_history_figure(history, path) -> Path:
    """Per-epoch training loss and accuracy curves."""
    path = Path(path)
    epochs = [h.epoch for h in history]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_loss.plot(epochs, [h.train_loss for h in history], color="tab:red", label="loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, [h.train_acc for h in history], color="tab:blue", label="accuracy")
    ax_acc.set_ylabel("train accuracy", color="tab:blue")
    ax_acc.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_eval_figures(report, report_path) -> List[Path]:
    """Accuracy-vs-window curve and the largest window's confusion matrix."""
    report_path = Path(report_path)
    out = []

    ks = sorted(report.windows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [report.top1_accuracy[k] for k in ks], marker="o", label="test top-1")
    ax.axhline(report.train_accuracy, color="tab:green", ls="--", label="train")
    ax.axhline(1.0 / report.num_classes, color="gray", ls=":", label="chance")
    ax.set_xlabel("events per window")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    acc_path = report_path.with_suffix(".accuracy.png")
    fig.savefig(acc_path, dpi=_DPI)
    plt.close(fig)
    out.append(acc_path)

    k_big = max(report.windows)
    conf = np.asarray(report.confusion[k_big])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(conf, cmap="Blues")
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            ax.text(j, i, str(conf[i, j]), ha="center", va="center")
    ax.set_xticks(range(len(report.class_names)), report.class_names, rotation=45, ha="right")
    ax.set_yticks(range(len(report.class_names)), report.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"confusion at {k_big} events")
    fig.colorbar(im)
    fig.tight_layout()
    conf_path = report_path.with_suffix(".confusion.png")
    fig.savefig(conf_path, dpi=_DPI)
    plt.close(fig)
    out.append(conf_path)
    return out


def save_bench_figures(report, report_path) -> List[Path]:
    """Grouped latency bars (median, p95 whisker) and size bars per cell."""
    report_path = Path(report_path)
    out = []
    builders = sorted({c.builder for c in report.cells})
    windows = sorted({c.window_k for c in report.cells})
    index = {(c.builder, c.window_k): c for c in report.cells}
    xs = np.arange(len(windows))
    width = 0.8 / max(1, len(builders))

    timed = [c for c in report.cells if c.median_us is not None]
    if timed:
        fig, ax = plt.subplots(figsize=(6, 4))
        for bi, b in enumerate(builders):
            meds = [index[(b, k)].median_us for k in windows if (b, k) in index]
            p95s = [index[(b, k)].p95_us for k in windows if (b, k) in index]
            pos = xs[: len(meds)] + bi * width
            err = np.clip(np.asarray(p95s) - np.asarray(meds), 0, None)
            ax.bar(pos, meds, width=width, label=b, yerr=err, capsize=3)
        ax.set_xticks(xs + 0.4 - width / 2, [str(k) for k in windows])
        ax.set_xlabel("events per window")
        ax.set_ylabel("build latency, µs (median, p95 whisker)")
        ax.legend()
        fig.tight_layout()
        lat_path = report_path.with_suffix(".latency.png")
        fig.savefig(lat_path, dpi=_DPI)
        plt.close(fig)
        out.append(lat_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for bi, b in enumerate(builders):
        sizes = [index[(b, k)].mean_size_bytes for k in windows if (b, k) in index]
        ax.bar(xs[: len(sizes)] + bi * width, sizes, width=width, label=b)
    ax.axhline(report.dense_frame_bytes, color="tab:red", ls="--",
               label=f"dense frame ({report.sensor_width}x{report.sensor_height})")
    ax.set_xticks(xs + 0.4 - width / 2, [str(k) for k in windows])
    ax.set_xlabel("events per window")
    ax.set_ylabel("serialized size, bytes")
    ax.legend()
    fig.tight_layout()
    mem_path = report_path.with_suffix(".memory.png")
    fig.savefig(mem_path, dpi=_DPI)
    plt.close(fig)
    out.append(mem_path)
    return out
