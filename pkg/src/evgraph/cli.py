"""Command-line entry point.

Subcommands: simulate, synth, sample, noise, build-graph, train, eval, bench.
Report-writing commands (train, eval, bench) also render PNG figures next to
their CSV/JSON outputs unless --no-figures is given. EVG_THREADS caps worker
parallelism; --seed pins all randomness.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmark import bench_transform, parse_builders
from .datasets import load_dataset_dir, save_dataset_dir
from .events import inject_noise, parse_events, sample_window, write_events
from .graphs import GraphConfig, build_graph, build_radius_graph, graph_stats, serialize_graph
from .network import ModelConfig, load_model, save_model
from .plots import save_bench_figures, save_eval_figures, save_history_figure
from .simulate import PatternSpec, SimConfig, SyntheticSpec, load_frames, make_synthetic_dataset, simulate_events
from .training import TrainConfig, evaluate, history_to_csv, train


def _fmt_of(path: Path) -> str:
    return "bin" if path.suffix == ".bin" else "csv"


def _read_stream(path: str):
    path = Path(path)
    return parse_events(path.read_bytes(), _fmt_of(path))


def _write_stream(stream, path: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_events(stream, _fmt_of(path)))


def _cmd_simulate(args) -> int:
    seq = load_frames(args.frames)
    cfg = SimConfig(threshold_c=args.threshold, interpolation=args.interpolation)
    stream = simulate_events(seq, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / "events.bin"
    out.write_bytes(write_events(stream, "bin"))
    print(f"simulated {len(stream)} events from {len(seq)} frames -> {out}")
    return 0


def _parse_classes(text: str):
    classes = []
    for token in text.split(","):
        name, kind, speed = token.strip().split(":")
        classes.append(PatternSpec(name, kind, float(speed)))
    return tuple(classes)


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(samples_per_class=args.samples)
    if args.classes:
        spec = SyntheticSpec(classes=_parse_classes(args.classes),
                             samples_per_class=args.samples)
    dataset = make_synthetic_dataset(spec, seed=args.seed)
    save_dataset_dir(dataset, args.out)
    counts = ", ".join(f"{n}" for n in dataset.class_names)
    print(f"wrote {len(dataset.all_streams())} samples ({counts}) under {args.out}")
    return 0


def _cmd_sample(args) -> int:
    stream = _read_stream(getattr(args, "in"))
    result = sample_window(stream, args.k, args.start)
    _write_stream(result.stream, args.out)
    note = " (short stream: fewer events than requested)" if result.short else ""
    print(f"sampled {len(result.stream)} events -> {args.out}{note}")
    return 0


def _cmd_noise(args) -> int:
    stream = _read_stream(getattr(args, "in"))
    noisy = inject_noise(stream, args.fraction, args.seed)
    _write_stream(noisy, args.out)
    print(f"{len(stream)} events + {len(noisy) - len(stream)} noise -> {args.out}")
    return 0


def _cmd_build_graph(args) -> int:
    stream = _read_stream(getattr(args, "in"))
    if args.variant == "radius":
        graph = build_radius_graph(stream, args.radius, args.cap)
    else:
        graph = build_graph(stream, GraphConfig(args.variant, args.tau))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_graph(graph))
    stats = graph_stats(graph)
    print(f"{args.variant}: {stats.num_nodes} nodes, {stats.num_edges} edges "
          f"({stats.num_chain_edges} chain, {stats.num_same_pos_edges} same-pos), "
          f"{stats.serialized_size_bytes} bytes -> {out}")
    return 0


def _cmd_train(args) -> int:
    dataset = load_dataset_dir(args.data, split_seed=args.seed)
    model_cfg = ModelConfig(use_edge_gate=not args.no_edge_gate,
                            keep_ratio=args.keep_ratio)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        window_k=args.k,
        graph=GraphConfig(args.variant, args.tau),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model, history = train(model_cfg, dataset, cfg, checkpoint_path=out)
    csv_path = out.with_suffix(out.suffix + ".history.csv")
    csv_path.write_text(history_to_csv(history))
    print(f"trained {args.epochs} epochs on {len(dataset.train)} samples; "
          f"final loss {history[-1].train_loss:.4f}, "
          f"acc {history[-1].train_acc:.3f} -> {out}")
    if not args.no_figures:
        fig = save_history_figure(history, out.with_suffix(out.suffix + ".history.png"))
        print(f"figure: {fig}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(Path(args.model).read_bytes())
    dataset = load_dataset_dir(args.data, split_seed=model.meta.seed)
    windows = [int(k) for k in args.windows.split(",")]
    report = evaluate(model, dataset, windows,
                      noise_fraction=args.noise, seed=args.seed)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    for k in windows:
        print(f"window {k}: top-1 {report.top1_accuracy[k]:.3f} "
              f"(train-test gap {report.train_test_gap[k]:+.3f})")
    print(f"report -> {out}")
    if not args.no_figures:
        for fig in save_eval_figures(report, out):
            print(f"figure: {fig}")
    return 0


def _cmd_bench(args) -> int:
    dataset = load_dataset_dir(args.data, split_seed=args.seed)
    builders = parse_builders(args.builders)
    windows = [int(k) for k in args.windows.split(",")]
    report = bench_transform(dataset, builders, windows, repeats=args.repeats)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    for cell in report.cells:
        print(f"{cell.builder} k={cell.window_k}: median {cell.median_us:.1f} µs, "
              f"p95 {cell.p95_us:.1f} µs, size {cell.mean_size_bytes:.0f} B, "
              f"span {cell.collection_span_us:.0f} µs")
    print(f"dense frame comparator: {report.dense_frame_bytes} bytes; report -> {out}")
    if not args.no_figures:
        for fig in save_bench_figures(report, out):
            print(f"figure: {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evgraph",
                                     description="event-graph classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="convert frames to an event stream")
    p.add_argument("--frames", required=True, help="PGM directory or .frames file")
    p.add_argument("--threshold", type=float, default=0.2, metavar="C")
    p.add_argument("--interpolation", choices=("none", "linear"), default="linear")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("synth", help="generate the synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=50, help="samples per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default="", help="name:kind:speed,... (default speed-contrast bars)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("sample", help="take a window of consecutive events")
    p.add_argument("--in", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--start", default="fixed:0", help="fixed:I or random:SEED")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("noise", help="inject uniform noise events")
    p.add_argument("--in", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_noise)

    p = sub.add_parser("build-graph", help="transform events into a serialized graph")
    p.add_argument("--variant", choices=("g1", "g2", "g3", "g4", "radius"), required=True)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--cap", type=int, default=8)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_graph)

    p = sub.add_parser("train", help="train a classifier on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=("g1", "g2", "g3", "g4"), default="g1")
    p.add_argument("--tau", type=int, default=4)
    p.add_argument("--k", type=int, default=100, help="training events per sample")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd-momentum"), default="adam")
    p.add_argument("--keep-ratio", type=float, default=0.5)
    p.add_argument("--no-edge-gate", action="store_true",
                   help="ablation: ignore edge attributes in attention")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path (model.tea)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with nested windows")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--windows", default="100,50,10")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--report", required=True, help="output JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="latency/memory benchmark of graph builders")
    p.add_argument("--data", required=True)
    p.add_argument("--builders", default="g1:tau=4,radius:r=3",
                   help="comma list, e.g. g1:tau=4,radius:r=3:cap=8")
    p.add_argument("--windows", default="10,100")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--report", required=True, help="output JSON path")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
