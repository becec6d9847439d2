import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, TestCase

from event_detection.exceptions import ArgumentError, DecodeError, EstimationError, SyncError
from event_detection.services.boxes import Box, BoxFrame, project_points
from event_detection.services.synthgen import SceneConfig, generate, misalign, misalign_frames
from event_detection.storage.box_storage import read_box_frames, write_box_frames
from labeling.services.corners import harris_corners, match_corners
from labeling.services.homography import HomographyResult, dlt, estimate_homography
from labeling.services.signals import ActivitySignal, activity_signals, frame_difference_signals
from labeling.services.sync import SyncResult, best_lag, sync_stream_to_frames, zncc, zncc_sync
from labeling.services.transfer import transfer_labels
from labeling.storage.correspondence_storage import read_correspondences, write_correspondences
from labeling.storage.homography_storage import read_homography, write_homography

TRUE_H = np.array([[1.05, 0.04, 12.0], [-0.03, 0.97, -6.0], [2e-5, -1e-5, 1.0]])


def moving_scene(**overrides):
    values = dict(width=96, height=80, num_objects=2, motion='stop_and_go', size_range=(24.0, 40.0),
                  speed_range=(80.0, 160.0), move_range_us=(150_000, 300_000), stop_range_us=(150_000, 300_000),
                  duration_us=1_500_000, seed=3)
    values.update(overrides)
    return generate(SceneConfig(**values))


class ZnccTests(SimpleTestCase):
    def test_affine_invariance(self):
        a = np.random.default_rng(0).standard_normal(50)
        self.assertAlmostEqual(zncc(a, 3.0 * a + 2.0), 1.0)
        self.assertAlmostEqual(zncc(a, -a), -1.0)
        self.assertTrue(np.isnan(zncc(a, np.ones(50))))

    def test_best_lag_recovers_shift(self):
        base = np.random.default_rng(1).standard_normal(200)
        events, frames = base[:150], base[7:157]
        self.assertEqual(best_lag(events, frames, 20)[0], 7)
        self.assertEqual(best_lag(frames, events, 20)[0], -7)

    def test_planted_offset(self):
        base = np.random.default_rng(2).random(300)
        event_signals = [ActivitySignal('event_sum', base[:240]), ActivitySignal('event_std', base[:240] ** 2)]
        frame_signals = [ActivitySignal('frame_diff_sum', base[6:246]),
                         ActivitySignal('frame_diff_std', base[6:246] ** 2)]
        result = zncc_sync(frame_signals=frame_signals, event_signals=event_signals, max_lag_us=500_000)
        self.assertEqual(result.lags, {'event_sum': 6, 'event_std': 6})
        self.assertEqual(result.offset_us, 100_000)

    def test_constant_signals_are_excluded(self):
        flat = [ActivitySignal('event_sum', np.zeros(50)), ActivitySignal('event_std', np.zeros(50))]
        frames = [ActivitySignal('frame_diff_sum', np.arange(50.0)), ActivitySignal('frame_diff_std', np.arange(50.0))]
        with self.assertRaises(SyncError):
            zncc_sync(flat, frames)

    def test_non_finite_signal(self):
        with self.assertRaises(ArgumentError):
            ActivitySignal('event_sum', np.array([1.0, np.nan]))


class StreamSyncTests(SimpleTestCase):
    def test_offset_from_synthetic_frames(self):
        scene = moving_scene()
        frames = misalign_frames(scene, 100_000, np.eye(3))
        result = sync_stream_to_frames(scene.stream, frames, 60, max_lag_us=300_000)
        self.assertLessEqual(abs(result.offset_us - 100_000), 16_667)

    def test_too_few_frames(self):
        scene = moving_scene(num_objects=1, duration_us=200_000)
        with self.assertRaises(SyncError):
            sync_stream_to_frames(scene.stream, misalign_frames(scene, 0, np.eye(3))[:2], 60)

    def test_signal_lengths(self):
        scene = moving_scene(duration_us=500_000)
        event_sum, event_std = activity_signals(scene.stream, 60)
        self.assertEqual(len(event_sum), int(scene.stream.t_end * 60 // 1_000_000) + 1)
        self.assertAlmostEqual(event_sum.values.sum(), len(scene.stream))
        diff_sum, _ = frame_difference_signals(misalign_frames(scene, 0, np.eye(3)), 60)
        self.assertEqual(len(diff_sum), 31)
        self.assertEqual(diff_sum.values[-1], 0.0)


class HarrisTests(SimpleTestCase):
    def test_square_has_four_corners(self):
        image = np.zeros((40, 40))
        image[10:30, 10:30] = 1.0
        points = harris_corners(image, max_points=4)
        self.assertEqual(len(points), 4)
        expected = np.array([[10, 10], [29, 10], [29, 29], [10, 29]], dtype=np.float64)
        for corner in expected:
            self.assertLessEqual(np.abs(points - corner).sum(axis=1).min(), 3.0)

    def test_uniform_image_has_none(self):
        self.assertEqual(harris_corners(np.full((30, 30), 0.5)).shape, (0, 2))

    def test_matching_recovers_translation(self):
        rng = np.random.default_rng(4)
        big = np.kron(rng.random((14, 14)), np.ones((6, 6)))
        src, dst = big[10:70, 10:70], big[8:68, 7:67]
        src_pts, dst_pts = harris_corners(src), harris_corners(dst)
        a, b = match_corners(src, dst, src_pts, dst_pts, max_distance=10.0)
        self.assertGreaterEqual(len(a), 4)
        np.testing.assert_array_equal(np.median(b - a, axis=0), [3.0, 2.0])


class HomographyTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(5)
        self.src = rng.uniform(0, 200, (40, 2))
        self.dst = project_points(TRUE_H, self.src)

    def test_dlt_identity_and_translation(self):
        np.testing.assert_allclose(dlt(self.src[:6], self.src[:6]), np.eye(3), atol=1e-9)
        shifted = dlt(self.src[:5], self.src[:5] + [4.0, -3.0])
        np.testing.assert_allclose(shifted, [[1, 0, 4], [0, 1, -3], [0, 0, 1]], atol=1e-9)

    def test_ransac_with_outliers(self):
        dst = self.dst.copy()
        outliers = np.arange(0, 40, 3)[:12]
        dst[outliers] += np.random.default_rng(6).uniform(20, 60, (len(outliers), 2))
        result = estimate_homography(self.src, dst, ransac_iters=500, inlier_tol=1.0, seed=1)
        np.testing.assert_allclose(result.matrix, TRUE_H, rtol=1e-6, atol=1e-6)
        self.assertEqual(result.inlier_count, 40 - len(outliers))
        self.assertFalse(result.inliers[outliers].any())
        self.assertLess(result.rmse, 1e-6)

    def test_same_seed_same_result(self):
        first = estimate_homography(self.src, self.dst, seed=3)
        second = estimate_homography(self.src, self.dst, seed=3)
        np.testing.assert_array_equal(first.matrix, second.matrix)

    def test_not_enough_points(self):
        with self.assertRaises(EstimationError):
            estimate_homography(self.src[:3], self.dst[:3])
        line = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with self.assertRaises(EstimationError):
            estimate_homography(line, line, ransac_iters=20)


class TransferTests(SimpleTestCase):
    def setUp(self):
        self.scene = moving_scene(motion='linear', duration_us=300_000)

    def test_identity_transfer(self):
        frames = [BoxFrame(100, (Box(10, 20, 30, 40, 1, t=100, track_id=2),))]
        moved = transfer_labels(frames, SyncResult(0), HomographyResult.from_matrix(np.eye(3)), (200, 200))
        self.assertEqual(moved, frames)

    def test_undoes_misalignment(self):
        matrix = np.diag([2.0, 2.0, 1.0])
        _, frame_labels = misalign(self.scene, 25_000, matrix)
        moved = transfer_labels(frame_labels, SyncResult(25_000), HomographyResult.from_matrix(matrix),
                                (self.scene.cfg.width, self.scene.cfg.height))
        self.assertEqual([f.t for f in moved], [f.t for f in self.scene.frames])
        for got, expected in zip(moved, self.scene.frames):
            for a, b in zip(got.boxes, expected.boxes):
                self.assertAlmostEqual(a.x, b.x)
                self.assertAlmostEqual(a.h, b.h)
                self.assertEqual(a.track_id, b.track_id)

    def test_boxes_outside_sensor_are_dropped(self):
        frames = [BoxFrame(0, (Box(300, 300, 10, 10, 0), Box(95, 5, 20, 10, 0)))]
        moved = transfer_labels(frames, SyncResult(0), HomographyResult.from_matrix(np.eye(3)), (100, 100))
        self.assertEqual(len(moved[0]), 1)
        self.assertEqual(moved[0].boxes[0].w, 5)


class LabelingStorageTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_homography_file(self):
        path = write_homography(HomographyResult.from_matrix(TRUE_H * 3.0), self.dir / 'h.json')
        np.testing.assert_allclose(read_homography(path).matrix, TRUE_H)
        bare = self.dir / 'bare.json'
        bare.write_text(json.dumps(np.eye(3).tolist()), encoding='utf-8')
        np.testing.assert_array_equal(read_homography(bare).matrix, np.eye(3))

    def test_invalid_homography_file(self):
        singular = self.dir / 'singular.json'
        singular.write_text(json.dumps({'matrix': [[0, 0, 0], [0, 0, 0], [0, 0, 0]]}), encoding='utf-8')
        with self.assertRaises(DecodeError):
            read_homography(singular)
        broken = self.dir / 'broken.json'
        broken.write_text('{"matrix": [', encoding='utf-8')
        with self.assertRaises(DecodeError):
            read_homography(broken)
        with self.assertRaises(FileNotFoundError):
            read_homography(self.dir / 'missing.json')

    def test_correspondence_file(self):
        src = np.array([[1.0, 2.0], [3.0, 4.0]])
        path = write_correspondences(src, src + 1, self.dir / 'pairs.csv')
        got_src, got_dst = read_correspondences(path)
        np.testing.assert_array_equal(got_src, src)
        np.testing.assert_array_equal(got_dst, src + 1)
        bad = self.dir / 'bad.csv'
        bad.write_text('a,b\n1,2\n', encoding='utf-8')
        with self.assertRaises(DecodeError):
            read_correspondences(bad)


class TransferCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_offset_and_homography_given(self):
        labels = write_box_frames([BoxFrame(1_000, (Box(10, 10, 20, 20, 0, t=1_000, track_id=1),))],
                                  self.dir / 'frame.boxes.jsonl')
        homography = write_homography(HomographyResult.from_matrix(np.diag([2.0, 2.0, 1.0])), self.dir / 'h.json')
        stdout = StringIO()
        call_command('transfer_labels', str(labels), '--offset-us', '500', '--homography', str(homography),
                     '--width', '100', '--height', '100', '--out', str(self.dir / 'out'), stdout=stdout,
                     stderr=StringIO())
        result = json.loads(stdout.getvalue().strip().splitlines()[-1])
        self.assertEqual(result['sync']['offset_us'], 500)
        moved = read_box_frames(self.dir / 'out' / 'transferred.boxes.jsonl')
        box = moved[0].boxes[0]
        self.assertEqual((moved[0].t, box.x, box.w, box.track_id), (1_500, 20.0, 40.0, 1))
