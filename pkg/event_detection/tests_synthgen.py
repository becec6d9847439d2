import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError
from event_detection.services.synthgen import SceneConfig, generate, gt_timestamps, misalign, misalign_frames


def small_scene(**overrides):
    values = dict(width=96, height=80, num_objects=2, size_range=(24.0, 40.0), speed_range=(80.0, 160.0),
                  duration_us=400_000, render_step_us=2_000, seed=11)
    values.update(overrides)
    return SceneConfig(**values)


class SceneConfigTests(SimpleTestCase):
    def test_invalid_ranges(self):
        with self.assertRaises(ValueError):
            SceneConfig(speed_range=(5.0, 1.0))
        with self.assertRaises(ValueError):
            SceneConfig(class_weights=(0.0, 0.0, 0.0))
        with self.assertRaises(ValueError):
            SceneConfig(width=64, height=64, size_range=(32.0, 80.0))

    def test_gt_timestamps_at_sixty_hertz(self):
        stamps = gt_timestamps(1_000_000)
        self.assertEqual(len(stamps), 61)
        self.assertEqual(stamps[:4], [0, 16_667, 33_333, 50_000])
        self.assertEqual(stamps[-1], 1_000_000)


class GenerateTests(SimpleTestCase):
    def test_same_seed_same_scene(self):
        first, second = generate(small_scene()), generate(small_scene())
        np.testing.assert_array_equal(first.stream.events, second.stream.events)
        self.assertEqual(first.frames, second.frames)
        other = generate(small_scene(seed=12))
        self.assertFalse(np.array_equal(first.stream.events, other.stream.events))

    def test_events_are_valid_and_boxes_on_sensor(self):
        scene = generate(small_scene(motion='linear'))
        events = scene.stream.events
        self.assertGreater(len(events), 0)
        self.assertTrue(np.all(np.diff(events['t'].astype(np.int64)) >= 0))
        self.assertLessEqual(int(events['t'][-1]), scene.cfg.duration_us)
        for frame in scene.frames:
            self.assertEqual(len(frame), 2)
            for box in frame.boxes:
                self.assertGreaterEqual(box.x, 0)
                self.assertLessEqual(box.x + box.w, scene.cfg.width)
                self.assertLessEqual(box.y + box.h, scene.cfg.height)
                self.assertEqual(box.t, frame.t)
        self.assertEqual(sorted({box.track_id for box in scene.frames[0].boxes}), [0, 1])

    def test_no_objects(self):
        scene = generate(small_scene(num_objects=0))
        self.assertEqual(len(scene.stream), 0)
        self.assertEqual(scene.frames, [])
        self.assertEqual(scene.metadata()['event_count'], 0)

    def test_static_objects_emit_nothing(self):
        scene = generate(small_scene(motion='static'))
        self.assertEqual(len(scene.stream), 0)
        self.assertEqual(scene.frames[0].boxes[0].x, scene.frames[-1].boxes[0].x)
        self.assertEqual(scene.stops, [])

    def test_stopped_object_is_silent(self):
        cfg = small_scene(num_objects=1, motion='stop_and_go', duration_us=1_500_000, move_range_us=(200_000, 300_000),
                          stop_range_us=(300_000, 400_000))
        scene = generate(cfg)
        self.assertTrue(scene.stops)
        ts = scene.stream.events['t'].astype(np.int64)
        step = cfg.render_step_us
        for stop in scene.stops:
            inside = (ts > stop.t_start + step) & (ts < stop.t_end - step)
            self.assertFalse(inside.any(), stop)
            held = [f.boxes[0] for f in scene.frames if stop.t_start + step <= f.t <= stop.t_end - step]
            self.assertLessEqual(len({(box.x, box.y) for box in held}), 1)

    def test_noise_only_scene(self):
        scene = generate(small_scene(num_objects=0, noise_rate=5.0))
        self.assertGreater(len(scene.stream), 0)
        self.assertEqual(scene.frames, [])


class MisalignTests(SimpleTestCase):
    def setUp(self):
        self.scene = generate(small_scene(motion='linear'))

    def test_identity(self):
        stream, frames = misalign(self.scene, 0, np.eye(3))
        self.assertIs(stream, self.scene.stream)
        self.assertEqual(frames, self.scene.frames)

    def test_offset_and_scale(self):
        _, frames = misalign(self.scene, 7_000, np.diag([2.0, 2.0, 1.0]))
        original = self.scene.frames[3].boxes[0]
        moved = frames[3].boxes[0]
        self.assertEqual(frames[3].t, self.scene.frames[3].t - 7_000)
        self.assertAlmostEqual(moved.x, original.x / 2)
        self.assertAlmostEqual(moved.w, original.w / 2)
        self.assertEqual(moved.track_id, original.track_id)

    def test_degenerate_homography(self):
        with self.assertRaises(ArgumentError):
            misalign(self.scene, 0, np.zeros((3, 3)))

    def test_frames_follow_the_shifted_clock(self):
        frames = misalign_frames(self.scene, 20_000, np.eye(3))
        stamps = [t for t, _ in frames]
        self.assertEqual(stamps[0], 0)
        self.assertTrue(all(t + 20_000 <= self.scene.cfg.duration_us for t in stamps))
        t_frame, image = frames[6]
        self.assertEqual(image.dtype, np.uint8)
        self.assertEqual(image.shape, (self.scene.cfg.height, self.scene.cfg.width))
        expected = np.clip(np.round(self.scene.render(t_frame + 20_000) * 255.0), 0, 255)
        np.testing.assert_allclose(image, expected, atol=1)
