"""evgraph: event streams to graphs, a graph transformer, and benchmarks."""

from .events import (
    Event,
    EventStream,
    SampleResult,
    inject_noise,
    parse_events,
    sample_window,
    write_events,
)
from .datasets import LabeledDataset, load_dataset_dir, save_dataset_dir
from .simulate import (
    FrameSequence,
    PatternSpec,
    SimConfig,
    SyntheticSpec,
    load_frames,
    make_synthetic_dataset,
    simulate_events,
)
from .graphs import (
    EventGraph,
    GraphConfig,
    GraphStats,
    build_graph,
    build_radius_graph,
    deserialize_graph,
    graph_stats,
    serialize_graph,
)
from .autodiff import Tape, Tensor, backward, finite_diff_check
from .network import (
    BatchNormState,
    GraphBatch,
    ModelConfig,
    ModelMeta,
    ModelParams,
    PoolParams,
    TeaLayerParams,
    batch_norm,
    classifier_forward,
    edge_gate,
    global_mean_pool,
    init_model,
    load_model,
    sag_pool,
    save_model,
    tea_forward,
)
from .training import (
    EvalReport,
    TrainConfig,
    cross_entropy,
    evaluate,
    history_to_csv,
    train,
)
from .benchmark import BenchReport, BuilderSpec, bench_memory, bench_transform

__version__ = "0.1.0"
