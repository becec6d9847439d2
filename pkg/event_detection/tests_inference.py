import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError, SequencingError
from event_detection.services.autodiff import DiffTensor
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.model import HeadOutput, build_model
from event_detection.services.events_core import EventStream, TimeSlice, make_events, slice_by_time
from event_detection.services.inference import DetectorSession, InferenceConfig, decode_head_output, detect_stream
from event_detection.services.representations import ReprConfig

WIDTH, HEIGHT = 64, 48
DELTA_T = 50_000


def random_stream(seed, count=3000, t_from=0, t_to=200_000):
    rng = np.random.default_rng(seed)
    ts = np.sort(rng.integers(t_from, t_to, count))
    return EventStream(WIDTH, HEIGHT, make_events(rng.integers(0, WIDTH, count), rng.integers(0, HEIGHT, count),
                                                  rng.integers(0, 2, count), ts))


class DetectorSessionTests(SimpleTestCase):
    def setUp(self):
        self.model = build_model(NetworkConfig.toy(channels=8, in_channels=2), seed=3)
        self.repr_cfg = ReprConfig(kind='histogram')
        self.loose = InferenceConfig(delta_t_us=DELTA_T, score_thresh=0.0, max_detections=10)

    def session(self, cfg=None):
        return DetectorSession(self.model, self.repr_cfg, WIDTH, HEIGHT, cfg or self.loose)

    def test_empty_slice_on_fresh_state_detects_nothing(self):
        session = self.session(InferenceConfig(delta_t_us=DELTA_T))
        empty = TimeSlice(0, DELTA_T, make_events([], [], [], []), WIDTH, HEIGHT)
        frame = session.step(empty)
        self.assertEqual(frame.t, DELTA_T)
        self.assertEqual(len(frame), 0)
        self.assertEqual(session.cursor, DELTA_T)
        self.assertIsNotNone(session.state)

    def test_run_stream_equals_fold_of_step(self):
        stream = random_stream(0)
        folded = self.session(InferenceConfig(delta_t_us=DELTA_T, score_thresh=0.0, max_detections=10,
                                              prefetch=False))
        expected = [folded.step(time_slice) for time_slice in slice_by_time(stream, DELTA_T)]
        got = self.session().run_stream(stream)
        self.assertEqual(len(got), 4)
        self.assertEqual(got, expected)
        self.assertTrue(any(len(frame) for frame in got))
        self.assertEqual([frame.t for frame in got], [50_000, 100_000, 150_000, 200_000])

    def test_detections_ignore_future_events(self):
        past = random_stream(1, t_to=200_000)
        future = random_stream(2, t_from=200_000, t_to=400_000)
        combined = EventStream(WIDTH, HEIGHT, np.concatenate([past.events, future.events]))
        prefix = self.session().run_stream(past)
        full = self.session().run_stream(combined)
        self.assertEqual(full[:len(prefix)], prefix)
        self.assertGreater(len(full), len(prefix))

    def test_out_of_order_slice(self):
        session = self.session()
        with self.assertRaises(SequencingError):
            session.step(TimeSlice(DELTA_T, 2 * DELTA_T, make_events([], [], [], []), WIDTH, HEIGHT))
        with self.assertRaises(SequencingError):
            session.step(TimeSlice(0, DELTA_T // 2, make_events([], [], [], []), WIDTH, HEIGHT))
        with self.assertRaises(ArgumentError):
            session.step(TimeSlice(0, DELTA_T, make_events([], [], [], []), WIDTH + 2, HEIGHT))

    def test_snapshot_and_restore_are_deterministic(self):
        slices = slice_by_time(random_stream(3), DELTA_T)
        session = self.session()
        session.step(slices[0])
        session.step(slices[1])
        snapshot = session.snapshot()
        first = session.step(slices[2])
        session.restore(snapshot)
        self.assertEqual(session.step(slices[2]), first)

    def test_reset_returns_to_stream_start(self):
        stream = random_stream(4)
        session = self.session()
        first = session.run_stream(stream)
        session.reset()
        self.assertEqual(session.run_stream(stream), first)

    def test_trailing_empty_slices_until_t_end(self):
        frames = self.session().run_stream(random_stream(5, t_to=60_000), t_end=300_000)
        self.assertEqual(frames[-1].t, 350_000)
        self.assertEqual(len(frames), 7)

    def test_empty_stream(self):
        frames, metrics = detect_stream(self.model, EventStream.empty(WIDTH, HEIGHT), self.repr_cfg, self.loose)
        self.assertEqual(frames, [])
        self.assertEqual(metrics['steps'], 0)

    def test_metrics(self):
        stream = random_stream(6)
        frames, metrics = detect_stream(self.model, stream, self.repr_cfg, self.loose)
        self.assertEqual(metrics['steps'], len(frames))
        self.assertEqual(metrics['events'], len(stream))
        self.assertGreater(metrics['events_per_second'], 0)


class DecodeHeadOutputTests(SimpleTestCase):
    def setUp(self):
        self.anchors = np.array([[50.0, 40.0, 30.0, 30.0], [52.0, 40.0, 30.0, 30.0], [10.0, 10.0, 8.0, 8.0]])

    def output(self, logits):
        logits = np.asarray(logits, dtype=np.float64)[None]
        return HeadOutput(DiffTensor(logits), DiffTensor(np.zeros((1, 3, 4))), None)

    def test_nms_keeps_best_of_overlapping_anchors(self):
        output = self.output([[5.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 0.0, 6.0]])
        frame = decode_head_output(output, self.anchors, 123, 100, 80, InferenceConfig())
        self.assertEqual(frame.t, 123)
        self.assertEqual(len(frame), 1)
        box = frame.boxes[0]
        self.assertEqual((box.x, box.y, box.w, box.h, box.class_id), (35.0, 25.0, 30.0, 30.0, 0))
        self.assertGreater(box.confidence, 0.9)

    def test_boxes_clipped_to_sensor(self):
        output = self.output([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 6.0, 0.0]])
        frame = decode_head_output(output, self.anchors, 0, 12, 12, InferenceConfig())
        self.assertEqual(len(frame), 1)
        box = frame.boxes[0]
        self.assertEqual((box.x, box.y, box.x + box.w, box.y + box.h), (6.0, 6.0, 12.0, 12.0))
        self.assertEqual(box.class_id, 1)
