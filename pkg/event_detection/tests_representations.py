import math

import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError
from event_detection.services.events_core import TimeSlice, make_events
from event_detection.services.representations import (
    ReprConfig,
    build_event_volume,
    build_histogram,
    build_representation,
    build_time_surface,
    channel_count,
    downsample_2x2,
)

WIDTH, HEIGHT = 12, 9


def make_slice(xs, ys, ps, ts, t_start=0, t_end=100_000, width=WIDTH, height=HEIGHT):
    return TimeSlice(t_start, t_end, make_events(xs, ys, ps, ts), width, height)


def random_slice(rng, count=None):
    count = int(rng.integers(0, 200)) if count is None else count
    ts = np.sort(rng.integers(0, 50_000, count))
    return make_slice(rng.integers(0, WIDTH, count), rng.integers(0, HEIGHT, count), rng.integers(0, 2, count), ts,
                      t_end=50_000)


def brute_histogram(time_slice, m):
    out = np.zeros((2, HEIGHT, WIDTH))
    for e in time_slice.events:
        out[e['p'], e['y'], e['x']] += 1
    return np.minimum(out / m, 1.0)


def brute_time_surface(time_slice, taus):
    out = np.zeros((2 * len(taus), HEIGHT, WIDTH))
    for p in (0, 1):
        latest = {}
        for e in time_slice.events:
            if e['p'] == p:
                latest[(int(e['y']), int(e['x']))] = int(e['t'])
        if not latest:
            continue
        newest = max(latest.values())
        for (y, x), t in latest.items():
            for j, tau in enumerate(taus):
                out[p * len(taus) + j, y, x] = math.exp((t - newest) / tau)
    return out


def brute_event_volume(time_slice, bins):
    out = np.zeros((2 * bins, HEIGHT, WIDTH))
    events = time_slice.events
    if not len(events):
        return out
    t_first, t_last = int(events['t'][0]), int(events['t'][-1])
    for e in events:
        t_star = 0.0 if t_last == t_first else (bins - 1) * (int(e['t']) - t_first) / (t_last - t_first)
        for b in range(bins):
            out[b * 2 + e['p'], e['y'], e['x']] += max(0.0, 1.0 - abs(b - t_star))
    return out


class HistogramTests(SimpleTestCase):
    cfg = ReprConfig(kind='histogram', m=20)

    def test_empty_slice(self):
        values = build_histogram(make_slice([], [], [], []), self.cfg).values
        self.assertEqual(values.shape, (2, HEIGHT, WIDTH))
        self.assertFalse(values.any())

    def test_clamped_hot_pixel(self):
        values = build_histogram(make_slice([3] * 25, [4] * 25, [1] * 25, range(25)), self.cfg).values
        self.assertEqual(values[1, 4, 3], 1.0)

    def test_off_events_stay_on_off_channel(self):
        values = build_histogram(make_slice([3] * 5, [4] * 5, [0] * 5, range(5)), self.cfg).values
        self.assertAlmostEqual(float(values[0, 4, 3]), 0.25)
        self.assertEqual(float(values[1, 4, 3]), 0.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            time_slice = random_slice(rng)
            got = build_histogram(time_slice, self.cfg).values
            self.assertEqual(got.dtype, np.float32)
            np.testing.assert_allclose(got, brute_histogram(time_slice, 20), atol=1e-5)

    def test_adding_an_event_never_decreases_values(self):
        rng = np.random.default_rng(1)
        time_slice = random_slice(rng, count=50)
        before = build_histogram(time_slice, self.cfg).values
        extended = np.concatenate([time_slice.events, make_events([0], [0], [1], [49_999])])
        after = build_histogram(TimeSlice(0, 50_000, extended, WIDTH, HEIGHT), self.cfg).values
        self.assertTrue(np.all(after >= before))

    def test_wrong_kind(self):
        with self.assertRaises(ArgumentError):
            build_histogram(make_slice([], [], [], []), ReprConfig(kind='event_volume'))


class TimeSurfaceTests(SimpleTestCase):
    cfg = ReprConfig(kind='time_surface', taus=(10_000.0, 100_000.0))

    def test_single_on_event(self):
        values = build_time_surface(make_slice([2], [3], [1], [500]), self.cfg).values
        self.assertEqual(values.shape, (4, HEIGHT, WIDTH))
        self.assertEqual(values[2, 3, 2], 1.0)
        self.assertEqual(values[3, 3, 2], 1.0)
        self.assertFalse(values[:2].any())

    def test_older_pixel_decays(self):
        values = build_time_surface(make_slice([0, 5], [0, 5], [1, 1], [0, 10_000]), self.cfg).values
        self.assertAlmostEqual(float(values[2, 0, 0]), math.exp(-1.0), places=5)
        self.assertAlmostEqual(float(values[3, 0, 0]), math.exp(-0.1), places=5)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            time_slice = random_slice(rng)
            got = build_time_surface(time_slice, self.cfg).values
            np.testing.assert_allclose(got, brute_time_surface(time_slice, self.cfg.taus), atol=1e-5)
            self.assertTrue(np.all((got >= 0) & (got <= 1)))
            for p in (0, 1):
                if np.any(time_slice.events['p'] == p):
                    for j in range(2):
                        self.assertGreaterEqual(int(np.sum(got[p * 2 + j] == 1.0)), 1)


class EventVolumeTests(SimpleTestCase):
    cfg = ReprConfig(kind='event_volume', bins=5)

    def test_one_event_lands_in_bin_zero(self):
        values = build_event_volume(make_slice([1], [1], [0], [123]), self.cfg).values
        self.assertEqual(values.shape, (10, HEIGHT, WIDTH))
        self.assertEqual(values[0, 1, 1], 1.0)
        self.assertAlmostEqual(float(values.sum()), 1.0)

    def test_endpoints(self):
        values = build_event_volume(make_slice([1, 2], [1, 2], [1, 1], [0, 40_000]), self.cfg).values
        self.assertEqual(values[1, 1, 1], 1.0)
        self.assertEqual(values[4 * 2 + 1, 2, 2], 1.0)

    def test_interior_event_splits_between_bins(self):
        values = build_event_volume(make_slice([0, 3, 0], [0, 3, 0], [1, 0, 1], [0, 15, 40]), self.cfg).values
        # t* = 4 * 15 / 40 = 1.5
        self.assertAlmostEqual(float(values[1 * 2 + 0, 3, 3]), 0.5)
        self.assertAlmostEqual(float(values[2 * 2 + 0, 3, 3]), 0.5)

    def test_equal_timestamps_go_to_bin_zero(self):
        values = build_event_volume(make_slice([0, 1, 2], [0, 0, 0], [1, 1, 0], [7, 7, 7]), self.cfg).values
        self.assertAlmostEqual(float(values[:2].sum()), 3.0)
        self.assertAlmostEqual(float(values[2:].sum()), 0.0)

    def test_matches_brute_force_and_conserves_mass(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            time_slice = random_slice(rng)
            got = build_event_volume(time_slice, self.cfg).values
            np.testing.assert_allclose(got, brute_event_volume(time_slice, 5), atol=1e-5)
            self.assertAlmostEqual(float(got.sum()), float(len(time_slice)), places=2)


class PolaritySeparationTests(SimpleTestCase):
    def test_on_events_never_touch_off_channels(self):
        rng = np.random.default_rng(4)
        count = 80
        time_slice = make_slice(rng.integers(0, WIDTH, count), rng.integers(0, HEIGHT, count), np.ones(count, int),
                                np.sort(rng.integers(0, 50_000, count)), t_end=50_000)
        for cfg in (ReprConfig(kind='histogram'), ReprConfig(kind='time_surface'), ReprConfig(kind='event_volume')):
            values = build_representation(time_slice, cfg).values
            self.assertEqual(values.shape[0], channel_count(cfg))
            if cfg.kind == 'histogram':
                off = values[0]
            elif cfg.kind == 'time_surface':
                off = values[:len(cfg.taus)]
            else:
                off = values[0::2]
            self.assertFalse(off.any(), cfg.kind)


class ReprConfigTests(SimpleTestCase):
    def test_channel_counts(self):
        self.assertEqual(channel_count(ReprConfig(kind='histogram')), 2)
        self.assertEqual(channel_count(ReprConfig(kind='time_surface', taus=(1.0, 2.0, 3.0))), 6)
        self.assertEqual(channel_count(ReprConfig()), 10)

    def test_invalid_values(self):
        with self.assertRaises(ValueError):
            ReprConfig(m=0)
        with self.assertRaises(ValueError):
            ReprConfig(taus=(10.0, -1.0))
        with self.assertRaises(ValueError):
            ReprConfig(bins=1)


class DownsampleTests(SimpleTestCase):
    def test_even_input_averages_blocks(self):
        values = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        out = downsample_2x2(values)
        np.testing.assert_allclose(out[0], [[2.5, 4.5], [10.5, 12.5]])

    def test_odd_edges_average_valid_pixels(self):
        values = np.ones((2, 3, 5), dtype=np.float32)
        out = downsample_2x2(values)
        self.assertEqual(out.shape, (2, 2, 3))
        np.testing.assert_allclose(out, 1.0)
