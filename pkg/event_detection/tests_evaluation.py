import math

import numpy as np
from django.test import SimpleTestCase

from event_detection.services.boxes import Box, BoxFrame, iou
from event_detection.services.evaluation import (
    COCO_IOU_THRESHOLDS,
    EvalConfig,
    StopInterval,
    evaluate,
    evaluate_sequences,
    pair_timestamps,
    paired_frames,
    retention_rate,
    track_iou_curve,
)
from event_detection.services.events_core import EventStream, make_events

STEP = 50_000
NO_WARMUP = EvalConfig(warmup_us=0, tolerance_us=0)


def gt_frames(count=4, start=STEP):
    frames = []
    for k in range(count):
        t = start + k * STEP
        frames.append(BoxFrame(t, (
            Box(10 + 5 * k, 20, 60, 50, 0, t=t, track_id=1),
            Box(120, 100 + 3 * k, 70, 80, 1, t=t, track_id=2),
        )))
    return frames


def reference_ap(dets, gts, thresholds):
    """Independent COCO AP: per-frame greedy matching, global score ranking, 101-point interpolation."""
    classes = sorted({box.class_id for frame in gts for box in frame.boxes})
    table = []
    for class_id in classes:
        row = []
        for threshold in thresholds:
            ranked = []
            n_gt = 0
            for det_frame, gt_frame in zip(dets, gts):
                gt_boxes = [box for box in gt_frame.boxes if box.class_id == class_id]
                n_gt += len(gt_boxes)
                det_boxes = sorted((box for box in det_frame.boxes if box.class_id == class_id),
                                   key=lambda box: -box.confidence)
                taken = set()
                for det in det_boxes:
                    best, best_iou = None, -1.0
                    for index, gt in enumerate(gt_boxes):
                        value = iou(det, gt)
                        if index not in taken and value > best_iou:
                            best, best_iou = index, value
                    hit = best is not None and best_iou >= threshold
                    if hit:
                        taken.add(best)
                    ranked.append((det.confidence, hit))
            ranked.sort(key=lambda item: -item[0])
            tp = fp = 0
            curve = []
            for _, hit in ranked:
                tp += hit
                fp += not hit
                curve.append((tp / n_gt, tp / (tp + fp)))
            samples = []
            for r in np.linspace(0, 1, 101):
                samples.append(max((p for rec, p in curve if rec >= r), default=0.0))
            row.append(float(np.mean(samples)))
        table.append(row)
    return float(np.mean(table))


class PairingTests(SimpleTestCase):
    def test_nearest_within_tolerance(self):
        reference = [round(k * 1e6 / 60) for k in range(30)]
        matches = pair_timestamps([50_000, 100_000, 150_000, 1_000_000], reference, 5_000)
        self.assertEqual([reference[i] for i in matches[:3]], [50_000, 100_000, 150_000])
        self.assertEqual(matches[3], -1)

    def test_each_ground_truth_frame_used_once(self):
        gts = [BoxFrame(100)]
        pairs = paired_frames([BoxFrame(98), BoxFrame(101)], gts, tolerance=5)
        self.assertEqual(len(pairs), 1)
        self.assertEqual(pairs[0][0].t, 101)

    def test_frameless_detections_use_given_timestamps(self):
        pairs = paired_frames([], gt_frames(3), 0, det_timestamps=[STEP, 2 * STEP])
        self.assertEqual([det.t for det, _ in pairs], [STEP, 2 * STEP])
        self.assertTrue(all(len(det) == 0 for det, _ in pairs))


class EvaluateTests(SimpleTestCase):
    def test_detections_equal_ground_truth(self):
        gts = gt_frames()
        report = evaluate(gts, gts, NO_WARMUP)
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.map_50, 1.0)
        self.assertEqual(report.map_75, 1.0)
        self.assertEqual(report.per_class_ap, {0: 1.0, 1: 1.0})
        self.assertEqual(report.num_timestamps, 4)
        self.assertEqual(report.as_dict()['per_class_ap'], {'0': 1.0, '1': 1.0})

    def test_no_detections(self):
        gts = gt_frames()
        report = evaluate([], gts, NO_WARMUP, det_timestamps=[frame.t for frame in gts])
        self.assertEqual(report.map, 0.0)
        self.assertEqual(report.num_ground_truth, 8)
        self.assertFalse(report.empty)

    def test_no_shared_timestamps(self):
        with self.assertLogs('event_detection.services.evaluation', level='WARNING'):
            report = evaluate([BoxFrame(7)], gt_frames(), NO_WARMUP)
        self.assertTrue(report.empty)
        self.assertEqual(report.num_timestamps, 0)

    def test_warmup_skips_early_timestamps(self):
        gts = gt_frames(count=12)
        report = evaluate(gts, gts, EvalConfig(tolerance_us=0))
        self.assertEqual(report.num_timestamps, len([f for f in gts if f.t >= 500_000]))
        early_only = evaluate([], gts[:9], EvalConfig(tolerance_us=0), det_timestamps=[f.t for f in gts[:9]])
        self.assertEqual(early_only.num_timestamps, 0)

    def test_size_filters_apply_to_both_sides(self):
        t = STEP
        small_gt = [BoxFrame(t, (Box(0, 0, 30, 30, 0, t=t), Box(50, 50, 100, 19, 0, t=t)))]
        report = evaluate(small_gt, small_gt, NO_WARMUP)
        self.assertEqual(report.num_ground_truth, 0)
        self.assertEqual(report.map, 0.0)

        gts = [BoxFrame(t, (Box(0, 0, 80, 80, 0, t=t),))]
        dets = [BoxFrame(t, (Box(0, 0, 80, 80, 0, t=t, confidence=0.5), Box(150, 150, 10, 10, 0, t=t)))]
        self.assertEqual(evaluate(dets, gts, NO_WARMUP).map, 1.0)

    def test_duplicate_of_missed_ground_truth_never_lowers_map(self):
        gts = gt_frames()
        dets = [BoxFrame(frame.t, (frame.boxes[0],)) for frame in gts]
        before = evaluate(dets, gts, NO_WARMUP).map
        dets[1] = BoxFrame(dets[1].t, dets[1].boxes + (gts[1].boxes[1],))
        self.assertGreaterEqual(evaluate(dets, gts, NO_WARMUP).map, before)

    def test_order_within_timestamp_is_irrelevant(self):
        rng = np.random.default_rng(0)
        gts = gt_frames()
        dets = []
        for frame in gts:
            boxes = [Box(b.x + rng.normal(0, 4), b.y + rng.normal(0, 4), b.w, b.h, b.class_id, t=frame.t,
                         confidence=float(rng.random())) for b in frame.boxes]
            dets.append(BoxFrame(frame.t, tuple(boxes)))
        shuffled = [BoxFrame(f.t, tuple(reversed(f.boxes))) for f in dets]
        self.assertEqual(evaluate(dets, gts, NO_WARMUP).as_dict(), evaluate(shuffled, gts, NO_WARMUP).as_dict())

    def test_matches_reference_on_small_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            frames = int(rng.integers(1, 6))
            gts, dets = [], []
            for k in range(frames):
                t = (k + 1) * STEP
                count = int(rng.integers(0, 3))
                gt_boxes = tuple(Box(rng.uniform(0, 150), rng.uniform(0, 150), rng.uniform(50, 90),
                                     rng.uniform(50, 90), int(rng.integers(0, 2)), t=t) for _ in range(count))
                det_boxes = [Box(b.x + rng.normal(0, 6), b.y + rng.normal(0, 6), b.w * rng.uniform(0.9, 1.1),
                                 b.h * rng.uniform(0.9, 1.1), b.class_id, t=t, confidence=float(rng.random()))
                             for b in gt_boxes if rng.random() < 0.8]
                for _ in range(int(rng.integers(0, 2))):
                    det_boxes.append(Box(rng.uniform(0, 150), rng.uniform(0, 150), rng.uniform(50, 90),
                                         rng.uniform(50, 90), int(rng.integers(0, 2)), t=t,
                                         confidence=float(rng.random())))
                gts.append(BoxFrame(t, gt_boxes))
                dets.append(BoxFrame(t, tuple(det_boxes)))
            if not any(len(frame) for frame in gts):
                continue
            report = evaluate(dets, gts, NO_WARMUP, det_timestamps=[frame.t for frame in gts])
            self.assertAlmostEqual(report.map, reference_ap(dets, gts, COCO_IOU_THRESHOLDS), delta=1e-6)

    def test_event_fraction_warmup(self):
        xs, ys = np.meshgrid(np.arange(10, 70), np.arange(10, 70))
        count = xs.size
        stream = EventStream(200, 200, make_events(xs.ravel(), ys.ravel(), np.ones(count, int), np.arange(count)))
        t = 200_000
        gts = [BoxFrame(t, (Box(10, 10, 60, 60, 0, t=t), Box(100, 100, 60, 60, 0, t=t)))]
        dets = [BoxFrame(t, (Box(10, 10, 60, 60, 0, t=t, confidence=0.9),
                             Box(100, 100, 60, 60, 0, t=t, confidence=0.8)))]
        cfg = EvalConfig(tolerance_us=0, warmup_mode='event_fraction')
        report = evaluate(dets, gts, cfg, stream=stream)
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.num_ground_truth, 1)
        self.assertEqual(report.num_detections, 1)
        self.assertTrue(evaluate(dets, gts, EvalConfig(tolerance_us=0)).empty)

    def test_sequences_accumulate(self):
        gts = gt_frames()
        other = [BoxFrame(f.t, tuple(Box(b.x, b.y, b.w, b.h, b.class_id, t=f.t) for b in f.boxes)) for f in gts]
        report = evaluate_sequences([(gts, gts), (other, other, [f.t for f in other])], NO_WARMUP)
        self.assertEqual(report.map, 1.0)
        self.assertEqual(report.num_timestamps, 8)

    def test_invalid_thresholds(self):
        with self.assertRaises(ValueError):
            EvalConfig(iou_thresholds=(0.75, 0.5))
        with self.assertRaises(ValueError):
            EvalConfig(iou_thresholds=(0.0, 0.5))


class TrackIouTests(SimpleTestCase):
    def test_perfect_and_missing_detections(self):
        gts = gt_frames()
        np.testing.assert_array_equal(track_iou_curve(gts, gts, bins=10, tolerance_us=0), np.ones(10))
        curve = track_iou_curve([], gts, bins=10, tolerance_us=0, det_timestamps=[f.t for f in gts])
        np.testing.assert_array_equal(curve, np.zeros(10))

    def test_two_sample_track(self):
        gts = [BoxFrame(0, (Box(0, 0, 60, 60, 0, t=0, track_id=4),)),
               BoxFrame(STEP, (Box(0, 0, 60, 60, 0, t=STEP, track_id=4),))]
        dets = [BoxFrame(0, (Box(0, 0, 60, 30, 0, t=0),)), BoxFrame(STEP, (Box(0, 0, 60, 60, 0, t=STEP),))]
        curve = track_iou_curve(dets, gts, bins=100, tolerance_us=0)
        np.testing.assert_allclose(curve[:50], 0.5)
        np.testing.assert_allclose(curve[50:], 1.0)

    def test_other_class_does_not_count(self):
        gts = [BoxFrame(0, (Box(0, 0, 60, 60, 0, t=0, track_id=1),))]
        dets = [BoxFrame(0, (Box(0, 0, 60, 60, 2, t=0),))]
        np.testing.assert_array_equal(track_iou_curve(dets, gts, bins=4, tolerance_us=0), np.zeros(4))

    def test_no_tracks(self):
        untracked = [BoxFrame(0, (Box(0, 0, 60, 60, 0),))]
        self.assertEqual(track_iou_curve(untracked, untracked).size, 0)


class RetentionTests(SimpleTestCase):
    def setUp(self):
        self.gts = [BoxFrame(k * STEP, (Box(40, 40, 60, 60, 0, t=k * STEP, track_id=7),)) for k in range(20)]
        self.stop = StopInterval(7, 2 * STEP, 16 * STEP)

    def test_object_held_through_the_stop(self):
        self.assertEqual(retention_rate(self.gts, self.gts, [self.stop], tolerance_us=0), 1.0)

    def test_detection_lost_inside_window(self):
        dets = list(self.gts)
        dets[6] = BoxFrame(dets[6].t)
        self.assertEqual(retention_rate(dets, self.gts, [self.stop], tolerance_us=0), 0.0)

    def test_short_intervals_skipped(self):
        short = StopInterval(7, 2 * STEP, 5 * STEP)
        self.assertTrue(math.isnan(retention_rate(self.gts, self.gts, [short], tolerance_us=0)))
