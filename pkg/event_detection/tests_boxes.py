import math

import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError
from event_detection.services.boxes import (
    Box,
    BoxFrame,
    center_to_xywh,
    check_homography,
    clip_box,
    clip_frame,
    decode,
    decode_boxes,
    encode,
    encode_boxes,
    filter_boxes,
    group_frames,
    iou,
    iou_matrix,
    map_box,
    match_anchors,
    nms,
    project_points,
    xywh_to_center,
)


def random_boxes(rng, count, size=100.0):
    xy = rng.uniform(0, size, (count, 2))
    wh = rng.uniform(5, size / 2, (count, 2))
    return np.hstack([xy, wh])


def reference_match(gt_xywh, anchors_xywh, thresh):
    overlaps = [[iou(Box(*g, class_id=0), Box(*a, class_id=0)) for a in anchors_xywh] for g in gt_xywh]
    overlaps = np.asarray(overlaps)
    matched = [-1] * len(anchors_xywh)
    free_gt, free_anchor = set(range(len(gt_xywh))), set(range(len(anchors_xywh)))
    while free_gt and free_anchor:
        best = max(((overlaps[g, a], -g, -a) for g in free_gt for a in free_anchor))
        value, g, a = best[0], -best[1], -best[2]
        if value <= 0:
            break
        matched[a] = g
        free_gt.discard(g)
        free_anchor.discard(a)
    for a in range(len(anchors_xywh)):
        if matched[a] < 0:
            g = int(np.argmax(overlaps[:, a]))
            if overlaps[g, a] >= thresh:
                matched[a] = g
    return matched


def reference_nms(boxes, thresh):
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].confidence)
    kept = []
    for i in order:
        if all(boxes[k].class_id != boxes[i].class_id or iou(boxes[k], boxes[i]) <= thresh for k in kept):
            kept.append(i)
    return [boxes[i] for i in kept]


class BoxTests(SimpleTestCase):
    def test_positive_dimensions(self):
        with self.assertRaises(ArgumentError):
            Box(0, 0, 0, 5, class_id=0)
        with self.assertRaises(ArgumentError):
            Box(0, 0, 5, -1, class_id=0)

    def test_group_frames_sorts_by_time(self):
        boxes = [Box(0, 0, 1, 1, 0, t=20), Box(0, 0, 2, 2, 0, t=10), Box(1, 1, 1, 1, 1, t=20)]
        frames = group_frames(boxes)
        self.assertEqual([frame.t for frame in frames], [10, 20])
        self.assertEqual(len(frames[1]), 2)


class IouTests(SimpleTestCase):
    def test_examples(self):
        a = Box(0, 0, 1, 1, 0)
        self.assertEqual(iou(a, a), 1.0)
        self.assertEqual(iou(a, Box(2, 2, 1, 1, 0)), 0.0)
        self.assertAlmostEqual(iou(a, Box(0.5, 0, 1, 1, 0)), 1.0 / 3.0)

    def test_symmetric_and_scale_invariant(self):
        rng = np.random.default_rng(0)
        a, b = random_boxes(rng, 30), random_boxes(rng, 30)
        forward = iou_matrix(a, b)
        np.testing.assert_allclose(forward, iou_matrix(b, a).T)
        np.testing.assert_allclose(forward, iou_matrix(a * 3.5, b * 3.5), atol=1e-12)
        self.assertTrue(np.all((forward >= 0) & (forward <= 1)))


class EncodingTests(SimpleTestCase):
    def test_box_equal_to_anchor(self):
        anchor = Box(10, 20, 30, 40, 0)
        np.testing.assert_allclose(encode(anchor, anchor), 0.0, atol=1e-12)

    def test_doubled_width(self):
        deltas = encode(Box(-5, 0, 20, 10, 0), Box(0, 0, 10, 10, 0))
        self.assertAlmostEqual(deltas[2], math.log(2) / 0.2, places=6)
        self.assertAlmostEqual(deltas[0], 0.0)

    def test_round_trip_on_random_boxes(self):
        rng = np.random.default_rng(1)
        boxes = random_boxes(rng, 200)
        anchors = np.hstack([rng.uniform(0, 100, (200, 2)), rng.uniform(5, 50, (200, 2))])
        decoded = decode_boxes(encode_boxes(boxes, anchors), anchors)
        self.assertLessEqual(np.abs(decoded - boxes).max(), 1e-3)
        box = decode(encode(Box(3, 4, 5, 6, 2), Box(0, 0, 8, 8, 0)), Box(0, 0, 8, 8, 0), class_id=2)
        self.assertAlmostEqual(box.w, 5.0)
        self.assertEqual(box.class_id, 2)

    def test_non_positive_dimensions(self):
        with self.assertRaises(ArgumentError):
            encode_boxes(np.array([[0, 0, 0, 4]]), np.array([[5, 5, 4, 4]]))


class MatchAnchorsTests(SimpleTestCase):
    def test_no_ground_truth(self):
        result = match_anchors(BoxFrame(0), np.array([[5, 5, 4, 4], [9, 9, 2, 2]]))
        self.assertEqual(result.num_positive, 0)
        np.testing.assert_array_equal(result.labels, -1)

    def test_identical_anchor(self):
        anchors = np.array([[5.0, 5.0, 4.0, 4.0], [50.0, 50.0, 10.0, 10.0]])
        result = match_anchors([Box(3, 3, 4, 4, class_id=2)], anchors)
        np.testing.assert_array_equal(result.matched_gt, [0, -1])
        np.testing.assert_allclose(result.deltas[0], 0.0, atol=1e-12)
        self.assertEqual(result.labels[0], 2)

    def test_ground_truth_below_threshold_still_matched(self):
        anchors = np.array([[5.0, 5.0, 10.0, 10.0]])
        result = match_anchors([Box(6, 6, 10, 10, 0)], anchors, iou_thresh=0.5)
        self.assertEqual(result.matched_gt.tolist(), [0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gts = random_boxes(rng, int(rng.integers(1, 11)))
            anchors = random_boxes(rng, int(rng.integers(1, 101)))
            frame = BoxFrame(0, tuple(Box(*row, class_id=0) for row in gts))
            result = match_anchors(frame, xywh_to_center(anchors), 0.5)
            self.assertEqual(result.matched_gt.tolist(), reference_match(gts, anchors, 0.5))

    def test_every_overlapping_ground_truth_gets_an_anchor(self):
        rng = np.random.default_rng(3)
        anchors = random_boxes(rng, 60)
        gts = random_boxes(rng, 8)
        result = match_anchors([Box(*row, class_id=1) for row in gts], xywh_to_center(anchors))
        overlaps = iou_matrix(gts, center_to_xywh(xywh_to_center(anchors)))
        for g in range(len(gts)):
            if overlaps[g].max() >= 0.5:
                self.assertIn(g, result.matched_gt.tolist())


class NmsTests(SimpleTestCase):
    def test_single_box(self):
        self.assertEqual(len(nms([Box(0, 0, 5, 5, 0, confidence=0.6)], score_thresh=0.5)), 1)

    def test_identical_boxes(self):
        high = Box(0, 0, 5, 5, 0, confidence=0.9)
        low = Box(0, 0, 5, 5, 0, confidence=0.4)
        self.assertEqual(nms([low, high]), [high])
        other_class = Box(0, 0, 5, 5, 1, confidence=0.4)
        self.assertEqual(nms([low, high, other_class]), [high, other_class])

    def test_matches_reference_and_is_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            count = int(rng.integers(1, 21))
            rows = random_boxes(rng, count, size=60.0)
            boxes = [Box(*row, class_id=int(rng.integers(0, 2)), confidence=float(score))
                     for row, score in zip(rows, rng.random(count))]
            kept = nms(boxes, iou_thresh=0.5)
            self.assertEqual(kept, reference_nms(boxes, 0.5))
            self.assertEqual(nms(kept, iou_thresh=0.5), kept)

    def test_max_detections(self):
        boxes = [Box(i * 10, 0, 5, 5, 0, confidence=1.0 - i * 0.01) for i in range(10)]
        self.assertEqual(len(nms(boxes, max_detections=3)), 3)


class FilterTests(SimpleTestCase):
    def test_size_rules(self):
        frame = BoxFrame(0, (
            Box(0, 0, 36, 48, 0),
            Box(0, 0, 100, 19, 0),
            Box(0, 0, 30, 30, 0),
            Box(0, 0, 20, 80, 0),
        ))
        kept = filter_boxes(frame)
        self.assertEqual([(b.w, b.h) for b in kept.boxes], [(36, 48), (20, 80)])

    def test_clip(self):
        self.assertIsNone(clip_box(Box(-10, -10, 5, 5, 0), 100, 100))
        clipped = clip_box(Box(90, -5, 20, 10, 0), 100, 100)
        self.assertEqual((clipped.x, clipped.y, clipped.w, clipped.h), (90, 0, 10, 5))
        self.assertEqual(len(clip_frame(BoxFrame(0, (Box(200, 200, 5, 5, 0),)), 100, 100)), 0)


class HomographyTests(SimpleTestCase):
    def test_identity_and_scale(self):
        box = Box(10, 20, 30, 40, 1, t=5, track_id=3)
        self.assertEqual(map_box(box, np.eye(3)), box)
        scaled = map_box(box, np.diag([2.0, 2.0, 1.0]), t=9)
        self.assertEqual((scaled.x, scaled.y, scaled.w, scaled.h, scaled.t), (20, 40, 60, 80, 9))
        self.assertEqual(scaled.track_id, 3)

    def test_hull_contains_projected_corners(self):
        homography = check_homography([[1.1, 0.2, 3.0], [-0.1, 0.9, 2.0], [1e-4, 2e-4, 1.0]])
        box = Box(10, 10, 40, 20, 0)
        mapped = map_box(box, homography)
        corners = project_points(homography, [[10, 10], [50, 10], [50, 30], [10, 30]])
        self.assertTrue(np.all(corners[:, 0] >= mapped.x - 1e-9))
        self.assertTrue(np.all(corners[:, 0] <= mapped.x + mapped.w + 1e-9))
        self.assertAlmostEqual(corners[:, 1].min(), mapped.y)

    def test_invalid_matrix(self):
        with self.assertRaises(ArgumentError):
            check_homography(np.zeros((3, 3)))
        with self.assertRaises(ArgumentError):
            check_homography([[1, 2, 0], [2, 4, 0], [0, 0, 1]])
        np.testing.assert_allclose(check_homography(np.eye(3) * 2.0), np.eye(3))
