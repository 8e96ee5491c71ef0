import numpy as np
import pytest

from evgraph.datasets import LabeledDataset, load_dataset_dir, parallel_map, save_dataset_dir, worker_count
from evgraph.errors import EmptyStream
from evgraph.simulate import SyntheticSpec, make_synthetic_dataset


@pytest.fixture(scope="module")
def dataset():
    return make_synthetic_dataset(SyntheticSpec(samples_per_class=5), seed=2)


def test_round_trip_through_directory(dataset, tmp_path):
    save_dataset_dir(dataset, tmp_path)
    back = load_dataset_dir(tmp_path, split_seed=0)
    assert back.class_names == dataset.class_names
    originals = sorted(dataset.all_streams(), key=lambda s: (s.label, s.t[0], len(s)))
    loaded = sorted(back.all_streams(), key=lambda s: (s.label, s.t[0], len(s)))
    assert originals == loaded


def test_class_ids_are_lexicographic(tmp_path):
    ds = make_synthetic_dataset(SyntheticSpec(samples_per_class=2), seed=0)
    save_dataset_dir(ds, tmp_path)
    back = load_dataset_dir(tmp_path)
    assert back.class_names == sorted(back.class_names)
    for s in back.all_streams():
        assert s.label == back.class_names.index(back.class_names[s.label])


def test_split_deterministic(dataset, tmp_path):
    save_dataset_dir(dataset, tmp_path)
    a = load_dataset_dir(tmp_path, split_seed=5)
    b = load_dataset_dir(tmp_path, split_seed=5)
    assert [len(x) for x in a.test] == [len(x) for x in b.test]
    c = load_dataset_dir(tmp_path, split_seed=6)
    assert len(c.test) == len(a.test)


def test_split_fraction(dataset, tmp_path):
    save_dataset_dir(dataset, tmp_path)
    back = load_dataset_dir(tmp_path, split_seed=1, test_fraction=0.2)
    assert len(back.test) == 2 and len(back.train) == 8


def test_empty_root_rejected(tmp_path):
    with pytest.raises(EmptyStream):
        load_dataset_dir(tmp_path)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("EVG_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("EVG_THREADS", "0")
    assert worker_count() == 1
    monkeypatch.delenv("EVG_THREADS")
    assert worker_count() >= 1


def test_parallel_map_preserves_order(monkeypatch):
    monkeypatch.setenv("EVG_THREADS", "4")
    assert parallel_map(lambda v: v * v, range(20)) == [v * v for v in range(20)]
    monkeypatch.setenv("EVG_THREADS", "1")
    assert parallel_map(lambda v: -v, [3, 1, 2]) == [-3, -1, -2]
