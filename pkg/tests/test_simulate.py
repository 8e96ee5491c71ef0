import math

import numpy as np
import pytest

from evgraph.errors import DimensionMismatch, InvalidSpec, TooFewFrames
from evgraph.events import write_events
from evgraph.simulate import (
    FrameSequence,
    PatternSpec,
    SimConfig,
    SyntheticSpec,
    load_frames,
    make_synthetic_dataset,
    parse_frames,
    read_pgm,
    simulate_events,
    write_frames,
)

EPS = 1e-3


def single_pixel_frames(lams, dt_us=1000):
    """Frames whose one pixel's log photocurrent follows the given values."""
    intensities = np.exp(np.asarray(lams)) - EPS
    assert intensities.min() >= 0 and intensities.max() <= 1
    frames = intensities.reshape(-1, 1, 1)
    ts = np.arange(len(lams), dtype=np.int64) * dt_us
    return FrameSequence(frames, ts)


def scalar_reference(lams, c):
    """Independent single-pixel oracle: walk the lambda path one frame at a
    time, emitting an event and advancing the reference by +-c per crossing."""
    ref = lams[0]
    polarities = []
    for lam in lams[1:]:
        while abs(lam - ref) / c + 1e-9 >= 1.0:
            p = 1 if lam > ref else -1
            polarities.append(p)
            ref += p * c
    return polarities


class TestThresholdModel:
    def test_constant_sequence_emits_nothing(self):
        seq = FrameSequence(np.full((5, 2, 2), 0.5), np.arange(5) * 100)
        assert len(simulate_events(seq)) == 0

    def test_ramp_emits_five_positive_events(self):
        # lambda rises 0.1 per frame step for 10 steps; C = 0.2 -> 5 events
        lams = math.log(0.1) + 0.1 * np.arange(11)
        stream = simulate_events(single_pixel_frames(lams), SimConfig(threshold_c=0.2))
        assert len(stream) == 5
        assert (stream.p == 1).all()

    def test_reversed_ramp_flips_polarities(self):
        lams = math.log(0.1) + 0.1 * np.arange(11)
        fwd = simulate_events(single_pixel_frames(lams), SimConfig(threshold_c=0.2))
        rev = simulate_events(single_pixel_frames(lams[::-1]), SimConfig(threshold_c=0.2))
        assert len(rev) == len(fwd) == 5
        assert (rev.p == -1).all()

    def test_multiple_crossings_in_one_step(self):
        lams = [math.log(0.1), math.log(0.1) + 0.75]
        stream = simulate_events(single_pixel_frames(lams), SimConfig(threshold_c=0.2))
        assert len(stream) == 3  # floor(0.75 / 0.2)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        lams = rng.uniform(math.log(0.05), math.log(0.9), size=20)
        c = float(rng.uniform(0.1, 0.5))
        stream = simulate_events(single_pixel_frames(lams),
                                 SimConfig(threshold_c=c, interpolation="none"))
        assert list(stream.p) == scalar_reference(lams, c)

    @pytest.mark.parametrize("seed", range(4))
    def test_multi_pixel_matches_per_pixel_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        frames = rng.uniform(0.05, 0.95, size=(12, 3, 4))
        seq = FrameSequence(frames, np.arange(12) * 1000)
        c = 0.3
        stream = simulate_events(seq, SimConfig(threshold_c=c, interpolation="none"))
        for y in range(3):
            for x in range(4):
                lams = np.log(frames[:, y, x] + EPS)
                expected = scalar_reference(lams, c)
                got = [int(p) for xx, yy, _, p in zip(stream.x, stream.y, stream.t, stream.p)
                       if xx == x and yy == y]
                assert got == expected, (x, y)

    def test_polarity_matches_interval_sign(self):
        rng = np.random.default_rng(5)
        frames = rng.uniform(0.05, 0.95, size=(8, 2, 2))
        seq = FrameSequence(frames, np.arange(8) * 1000)
        stream = simulate_events(seq, SimConfig(threshold_c=0.25, interpolation="none"))
        lam = np.log(frames + EPS)
        for x, y, t, p in stream:
            f = t // 1000
            assert np.sign(lam[f, y, x] - lam[f - 1, y, x]) == p

    def test_raising_threshold_never_adds_events(self):
        rng = np.random.default_rng(11)
        frames = rng.uniform(0.05, 0.95, size=(10, 4, 4))
        seq = FrameSequence(frames, np.arange(10) * 500)
        counts = [len(simulate_events(seq, SimConfig(threshold_c=c)))
                  for c in (0.1, 0.2, 0.4, 0.8)]
        assert counts == sorted(counts, reverse=True)

    def test_interpolated_timestamps_inside_step(self):
        lams = [math.log(0.1), math.log(0.1) + 0.9]
        stream = simulate_events(single_pixel_frames(lams, dt_us=1000),
                                 SimConfig(threshold_c=0.2, interpolation="linear"))
        assert (stream.t > 0).all() and (stream.t <= 1000).all()
        assert list(stream.t) == sorted(stream.t)

    def test_no_interpolation_stamps_at_frame_time(self):
        lams = [math.log(0.1), math.log(0.1) + 0.9]
        stream = simulate_events(single_pixel_frames(lams, dt_us=1000),
                                 SimConfig(threshold_c=0.2, interpolation="none"))
        assert (stream.t == 1000).all()

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            simulate_events(FrameSequence(np.zeros((1, 2, 2)), [0]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            FrameSequence(np.zeros((3, 2, 2)), [0, 1])


class TestFrameIO:
    def test_pgm_decode(self):
        data = b"P5\n# comment\n2 2\n255\n" + bytes([0, 128, 255, 64])
        img = read_pgm(data)
        assert img.shape == (2, 2)
        assert img[0, 0] == 0.0 and img[0, 1] == pytest.approx(128 / 255)

    def test_frames_container_round_trip(self):
        rng = np.random.default_rng(0)
        seq = FrameSequence(rng.integers(0, 256, size=(4, 3, 5)) / 255.0,
                            np.array([0, 10, 25, 40]))
        back = parse_frames(write_frames(seq))
        assert np.array_equal(back.timestamps, seq.timestamps)
        assert np.allclose(back.frames, seq.frames)

    def test_pgm_directory_loader(self, tmp_path):
        for i, value in enumerate((10, 200, 90)):
            payload = b"P5\n2 2\n255\n" + bytes([value] * 4)
            (tmp_path / f"frame_{i:03d}.pgm").write_bytes(payload)
        (tmp_path / "timestamps.txt").write_text("0\n1000\n2000\n")
        seq = load_frames(tmp_path)
        assert len(seq) == 3 and seq.width == 2
        assert seq.frames[1, 0, 0] == pytest.approx(200 / 255)


class TestSyntheticDataset:
    def test_split_sizes_and_balance(self):
        ds = make_synthetic_dataset(SyntheticSpec(samples_per_class=10), seed=1)
        assert len(ds.train) == 16 and len(ds.test) == 4
        labels = [s.label for s in ds.train]
        assert labels.count(0) == labels.count(1) == 8

    def test_deterministic_bytes(self):
        spec = SyntheticSpec(samples_per_class=4)
        a = make_synthetic_dataset(spec, seed=3)
        b = make_synthetic_dataset(spec, seed=3)
        for sa, sb in zip(a.all_streams(), b.all_streams()):
            assert write_events(sa, "bin") == write_events(sb, "bin")

    def test_fast_class_has_smaller_median_gap(self):
        ds = make_synthetic_dataset(SyntheticSpec(samples_per_class=8), seed=0)
        med = {}
        for label in (0, 1):
            gaps = [np.median(np.diff(s.t)) for s in ds.all_streams() if s.label == label]
            med[ds.class_names[label]] = float(np.median(gaps))
        assert med["bar_fast"] < med["bar_slow"]

    def test_requires_two_classes(self):
        with pytest.raises(InvalidSpec):
            make_synthetic_dataset(
                SyntheticSpec(classes=(PatternSpec("only", "bar", 1.0),)))

    def test_requires_speed_contrast(self):
        with pytest.raises(InvalidSpec):
            make_synthetic_dataset(SyntheticSpec(classes=(
                PatternSpec("a", "bar", 1.0), PatternSpec("b", "blob", 1.0))))

    def test_unknown_kind(self):
        with pytest.raises(InvalidSpec):
            make_synthetic_dataset(SyntheticSpec(classes=(
                PatternSpec("a", "swirl", 1.0), PatternSpec("b", "swirl", 2.0))))

    def test_blob_class_renders(self):
        ds = make_synthetic_dataset(SyntheticSpec(
            classes=(PatternSpec("slow", "blob", 0.02), PatternSpec("fast", "blob", 0.08)),
            samples_per_class=2), seed=0)
        assert all(len(s) > 0 for s in ds.all_streams())
