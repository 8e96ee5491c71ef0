import numpy as np
import pytest

from evgraph.benchmark import (
    BenchReport,
    BuilderSpec,
    bench_memory,
    bench_transform,
    parse_builders,
)
from evgraph.simulate import SyntheticSpec, make_synthetic_dataset


@pytest.fixture(scope="module")
def dataset():
    return make_synthetic_dataset(SyntheticSpec(samples_per_class=4), seed=1)


class TestBuilderSpecs:
    def test_parse_mixed_list(self):
        specs = parse_builders("g1:tau=4,radius:r=3:cap=8")
        assert specs[0] == BuilderSpec("g1", tau=4)
        assert specs[1] == BuilderSpec("radius", radius=3.0, cap=8)

    def test_parse_defaults(self):
        assert parse_builders("g2")[0] == BuilderSpec("g2", tau=1)

    def test_unknown_builder(self):
        with pytest.raises(ValueError):
            parse_builders("g9:tau=1")

    def test_labels(self):
        assert BuilderSpec("g1", tau=4).label == "g1:tau=4"
        assert BuilderSpec("radius", radius=2.5, cap=4).label == "radius:r=2.5:cap=4"


class TestBenchTransform:
    def test_cells_and_stats(self, dataset):
        report = bench_transform(dataset, parse_builders("g1:tau=2"), [10, 50], repeats=30)
        assert len(report.cells) == 2
        for cell in report.cells:
            assert cell.samples == 30
            assert cell.p95_us >= cell.median_us
            assert cell.mean_size_bytes > 0
            assert cell.collection_span_us > 0

    def test_repeats_precondition(self, dataset):
        with pytest.raises(ValueError):
            bench_transform(dataset, parse_builders("g1"), [10], repeats=0)
        with pytest.raises(ValueError):
            bench_transform(dataset, parse_builders("g1"), [10], repeats=29)

    def test_empty_builder_list(self, dataset):
        report = bench_transform(dataset, [], [10], repeats=30)
        assert report.cells == []

    def test_latency_grows_with_window(self, dataset):
        report = bench_transform(dataset, parse_builders("g1:tau=4"), [10, 100], repeats=40)
        by_k = {c.window_k: c.median_us for c in report.cells}
        assert by_k[10] < by_k[100]

    def test_sizes_independent_of_latency_noise(self, dataset):
        a = bench_transform(dataset, parse_builders("g1:tau=2"), [20], repeats=30)
        b = bench_transform(dataset, parse_builders("g1:tau=2"), [20], repeats=30)
        assert a.cells[0].mean_size_bytes == b.cells[0].mean_size_bytes
        assert a.cells[0].collection_span_us == b.cells[0].collection_span_us


class TestBenchMemory:
    def test_dense_frame_comparator(self, dataset):
        report = bench_memory(dataset, parse_builders("g1:tau=4"), [100])
        assert report.dense_frame_bytes == 32 * 32 * 4
        cell = report.cells[0]
        assert cell.median_us is None
        assert cell.samples == len(dataset.all_streams())
        assert cell.mean_size_bytes < report.dense_frame_bytes

    def test_radius_graphs_bigger_than_g1_when_dense(self, dataset):
        report = bench_memory(
            dataset, parse_builders("g1:tau=1,radius:r=10:cap=16"), [50])
        sizes = {c.builder: c.mean_size_bytes for c in report.cells}
        assert sizes["radius:r=10:cap=16"] > sizes["g1:tau=1"]


class TestReportIO:
    def test_json_round_trip(self, dataset):
        report = bench_transform(dataset, parse_builders("g1:tau=2,radius:r=5"), [10],
                                 repeats=30)
        back = BenchReport.from_json(report.to_json())
        assert back == report

    def test_memory_report_round_trip(self, dataset):
        report = bench_memory(dataset, parse_builders("g4"), [25])
        assert BenchReport.from_json(report.to_json()) == report
