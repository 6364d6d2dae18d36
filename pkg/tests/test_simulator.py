import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spadflow import rng
from spadflow.belief import SystemConfig
from spadflow.errors import InvalidInputError
from spadflow.scenes import GroundTruthFrame, RectDance, SinglePixelSine, StaticMaps, scene_eval, static_standin
from spadflow.simulator import FluxParams, flux_to_probabilities, sample_frame, sample_toas, simulate

SYS = SystemConfig()


def flat(shape, d, w, pi):
    return GroundTruthFrame(np.full(shape, d), np.full(shape, w), np.full(shape, pi))


class TestFlux:
    def test_example(self):
        pi, w = flux_to_probabilities(FluxParams(0.05, 0.05, 10))
        assert pi == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert pi == pytest.approx(0.632121, abs=5e-7)
        assert w == pytest.approx(0.5)

    def test_pure_signal_and_background(self):
        assert flux_to_probabilities(FluxParams(0.01, 0.0))[1] == 1.0
        assert flux_to_probabilities(FluxParams(0.0, 0.01))[1] == 0.0

    def test_zero_rate(self):
        with pytest.raises(InvalidInputError):
            flux_to_probabilities(FluxParams(0.0, 0.0))

    def test_regime_checks(self):
        with pytest.warns(UserWarning):
            FluxParams(0.1, 0.1)
        with pytest.raises(InvalidInputError):
            FluxParams(0.6, 0.6)
        with pytest.raises(InvalidInputError):
            FluxParams(-0.1, 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            FluxParams(0.01, 0.02)


class TestScenes:
    def test_sine_phase_zero(self):
        s = SinglePixelSine()
        assert scene_eval(s, 0).range_map[0, 0] == s.center
        assert scene_eval(s, 250).range_map[0, 0] == pytest.approx(s.center + s.amplitude)

    def test_sine_schedule(self):
        s = SinglePixelSine()
        assert [s.w_at(n) for n in (0, 599, 600, 1099, 1100, 1999)] == [0.3, 0.3, 0.8, 0.8, 0.3, 0.3]

    def test_out_of_range_frame(self):
        with pytest.raises(InvalidInputError):
            scene_eval(SinglePixelSine(frames=10), 10)

    def test_static_is_static(self):
        s = static_standin(16, 16, frames=10)
        a, b = scene_eval(s, 0), scene_eval(s, 9)
        assert np.array_equal(a.range_map, b.range_map)
        assert np.array_equal(a.detect_prob_map, b.detect_prob_map)

    def test_standin_statistics(self):
        gt = scene_eval(static_standin(), 0)
        assert gt.shape == (64, 64)
        assert 0.04 < gt.detect_prob_map.mean() < 0.06
        assert gt.range_map.min() >= 1000 and gt.range_map.max() == 2000
        gt.check_range(2500)

    def test_rect_dance_first_object(self):
        s = RectDance()
        assert "obj1" in s.objects(0)
        assert "obj1" not in s.objects(800)
        assert "obj1" not in s.objects(1599)
        assert "obj1" in s.objects(1600)
        gt0, gt800 = scene_eval(s, 0), scene_eval(s, 800)
        foot = s.masks(0)["obj1"][0]
        assert np.all(gt0.range_map[foot] == s.obj1_range)
        assert np.all(gt800.range_map[foot] == s.backplane_range)

    def test_rect_dance_third_object_enters_from_left(self):
        s = RectDance()
        assert "obj3" not in s.objects(1599)
        cols = [np.flatnonzero(s.masks(n)["obj3"][0].any(axis=0)) for n in (1610, 1900)]
        assert cols[0].min() == 0
        assert cols[1].max() > cols[0].max()

    def test_rect_dance_rotation_ccw(self):
        s = RectDance()
        r0 = s.objects(0)["obj2"][0]
        r = s.objects(200)["obj2"][0]  # 90 degrees later: above the centre
        assert r0.center_col > 50 and r0.center_row == pytest.approx(50)
        assert r.center_row == pytest.approx(50 - s.orbit_radius)
        assert r.center_col == pytest.approx(50)

    def test_rect_dance_full_occlusion(self):
        s = RectDance()
        hidden = [n for n in range(800) if not s.masks(n)["obj1"][1].any()]
        assert hidden and all(n < 800 for n in hidden)

    def test_truth_validation(self):
        with pytest.raises(InvalidInputError):
            GroundTruthFrame(np.zeros((2, 2)), np.full((2, 2), 1.5), np.zeros((2, 2)))
        with pytest.raises(InvalidInputError):
            GroundTruthFrame(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
        with pytest.raises(InvalidInputError):
            flat((1, 1), 1600.0, 0.5, 0.5).check_range(1500)


class TestSampling:
    def test_no_detections(self):
        ev = sample_frame(flat((8, 8), 300, 0.5, 0.0), SYS, 1, 1)
        assert len(ev) == 0

    def test_signal_toa_mean(self):
        n = 100_000
        toa = sample_toas(np.full((1, n), 300.0), 1.0, 1.0, SYS, 3, 1)
        assert not np.isnan(toa).any()
        assert abs(toa.mean() - 300) <= 4 * math.sqrt(200 / n)

    def test_detection_and_label_rates(self):
        n = 100_000
        toa, lab = sample_toas(np.full((1, n), 300.0), 0.3, 0.5, SYS, 4, 1, with_labels=True)
        det = ~np.isnan(toa)
        assert abs(det.mean() - 0.5) <= 4 * math.sqrt(0.25 / n)
        k = det.sum()
        frac = lab[det].mean()
        assert abs(frac - 0.3) <= 4 * math.sqrt(0.21 / k)
        assert not lab[~det].any()

    def test_background_uniform(self):
        n = 100_000
        toa = sample_toas(np.full((1, n), 300.0), 0.0, 1.0, SYS, 5, 1)
        assert abs(toa.mean() - 750) <= 4 * 1500 / math.sqrt(12 * n)
        counts = np.histogram(toa, bins=10, range=(0, 1500))[0]
        assert np.all(np.abs(counts - n / 10) <= 4 * math.sqrt(n * 0.09))

    def test_redraw_keeps_range(self):
        toa = sample_toas(np.full((1, 50_000), 5.0), 1.0, 1.0, SYS, 6, 1)
        assert np.all((toa >= 0) & (toa < 1500))
        toa = sample_toas(np.full((1, 50_000), 1495.0), 1.0, 1.0, SYS, 6, 1)
        assert np.all((toa >= 0) & (toa < 1500))

    def test_unreachable_range(self):
        with pytest.raises(InvalidInputError):
            sample_toas(np.full((1, 10), -1000.0), 1.0, 1.0, SYS, 1, 1)

    def test_seed_determinism(self):
        gt = flat((16, 16), 700, 0.4, 0.3)
        a = sample_frame(gt, SYS, 42, 7, debug=True)
        b = sample_frame(gt, SYS, 42, 7, debug=True)
        assert np.array_equal(a.pixels, b.pixels) and np.array_equal(a.toas, b.toas)
        assert np.array_equal(a.labels, b.labels)
        c = sample_frame(gt, SYS, 43, 7)
        assert not np.array_equal(a.toas, c.toas) or not np.array_equal(a.pixels, c.pixels)

    def test_frames_differ(self):
        gt = flat((16, 16), 700, 0.4, 0.5)
        assert not np.array_equal(sample_frame(gt, SYS, 1, 1).toas, sample_frame(gt, SYS, 1, 2).toas)

    def test_adding_pixels_keeps_draws(self):
        small = sample_toas(np.full((5, 7), 700.0), 0.5, 0.5, SYS, 9, 3)
        big = sample_toas(np.full((9, 12), 700.0), 0.5, 0.5, SYS, 9, 3)
        assert np.array_equal(small, big[:5, :7], equal_nan=True)

    def test_batched_seeds(self):
        seeds = np.array([1, 2, 3], dtype=np.uint64)
        batched = sample_toas(np.full((4, 4), 700.0), 0.5, 0.5, SYS, seeds, 2)
        for i, s in enumerate(seeds):
            assert np.array_equal(batched[i], sample_toas(np.full((4, 4), 700.0), 0.5, 0.5, SYS, int(s), 2), equal_nan=True)

    def test_events_sorted_and_one_per_pixel(self):
        ev = sample_frame(flat((10, 10), 700, 0.5, 0.9), SYS, 1, 1)
        assert np.all(np.diff(ev.pixels) > 0)
        ev.validate(100, 1500)

    def test_simulate_numbers_frames_from_one(self):
        frames = list(simulate(SinglePixelSine(frames=5), SYS, 0))
        assert [ev.frame_index for _, ev in frames] == [1, 2, 3, 4, 5]

    @given(st.integers(0, 2**63), st.integers(0, 10**6))
    @settings(max_examples=50)
    def test_toas_in_period(self, seed, frame):
        toa = sample_toas(np.linspace(100, 1400, 64).reshape(8, 8), 0.5, 1.0, SYS, seed, frame)
        assert np.all((toa >= 0) & (toa < 1500))


class TestRng:
    def test_uniform_range_and_moments(self):
        key = rng.stream_key(1, 1, np.arange(200_000, dtype=np.uint64), np.uint64(0))
        u = rng.uniform(key, 0)
        assert u.min() >= 0 and u.max() < 1
        assert abs(u.mean() - 0.5) <= 4 * math.sqrt(1 / 12 / u.size)

    def test_slots_uncorrelated(self):
        key = rng.stream_key(1, 1, np.arange(200_000, dtype=np.uint64), np.uint64(0))
        a, b = rng.uniform(key, 0), rng.uniform(key, 1)
        assert abs(np.corrcoef(a, b)[0, 1]) <= 4 / math.sqrt(a.size)

    def test_rows_and_cols_distinct(self):
        k1 = rng.stream_key(1, 1, np.uint64(2), np.uint64(3))
        k2 = rng.stream_key(1, 1, np.uint64(3), np.uint64(2))
        assert k1 != k2
