import math

import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError, TrainingError
from event_detection.services.autodiff import DiffTensor
from event_detection.services.losses import (
    StepTargets,
    detection_loss,
    init_focal_biases,
    smooth_l1,
    softmax_focal_loss,
    temporal_consistency_loss,
)
from event_detection.services.optimizer import Adam, adam_step


def cross_entropy(logits, target):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return float(-np.take_along_axis(log_probs, target[..., None], axis=-1).mean())


class FocalLossTests(SimpleTestCase):
    def test_certain_prediction(self):
        loss = softmax_focal_loss(DiffTensor(np.array([[50.0, -50.0]])), np.array([0]))
        self.assertAlmostEqual(loss.item(), 0.0, places=12)

    def test_half_probability(self):
        loss = softmax_focal_loss(DiffTensor(np.zeros((1, 2))), np.array([1]), gamma=2.0)
        self.assertAlmostEqual(loss.item(), 0.25 * math.log(2), places=6)

    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((3, 7, 5))
        target = rng.integers(0, 5, (3, 7))
        loss = softmax_focal_loss(DiffTensor(logits), target, gamma=0.0)
        self.assertAlmostEqual(loss.item(), cross_entropy(logits, target), places=10)

    def test_decreases_with_true_class_probability(self):
        values = []
        for logit in np.linspace(-3, 3, 13):
            values.append(softmax_focal_loss(DiffTensor(np.array([[logit, 0.0, 0.0]])), np.array([0])).item())
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
        self.assertTrue(all(v >= 0 for v in values))

    def test_masked_anchors_are_ignored(self):
        logits = DiffTensor(np.array([[[0.0, 0.0], [10.0, -10.0]]]))
        loss = softmax_focal_loss(logits, np.array([[1, 0]]), weights=np.array([[0.0, 1.0]]))
        self.assertAlmostEqual(loss.item(), 0.0, places=6)
        empty = softmax_focal_loss(logits, np.array([[1, 0]]), weights=np.zeros((1, 2)))
        self.assertEqual(empty.item(), 0.0)

    def test_invalid_class_index(self):
        with self.assertRaises(ArgumentError):
            softmax_focal_loss(DiffTensor(np.zeros((2, 3))), np.array([0, 3]))


class FocalBiasValueTests(SimpleTestCase):
    def test_values(self):
        self.assertAlmostEqual(init_focal_biases(3)[-1], math.log(297), places=12)
        self.assertAlmostEqual(init_focal_biases(1)[-1], math.log(99), places=12)
        np.testing.assert_array_equal(init_focal_biases(3)[:-1], 0.0)

    def test_random_class_counts(self):
        rng = np.random.default_rng(1)
        for num_classes in rng.integers(1, 21, 10):
            biases = init_focal_biases(int(num_classes), 0.99)
            probs = np.exp(biases) / np.exp(biases).sum()
            self.assertAlmostEqual(float(probs[-1]), 0.99, delta=1e-6)


class SmoothL1Tests(SimpleTestCase):
    def value(self, d):
        return smooth_l1(DiffTensor(np.array([d])), np.array([0.0]), beta=0.11).item()

    def test_piecewise_values(self):
        self.assertEqual(self.value(0.0), 0.0)
        self.assertAlmostEqual(self.value(0.11), 0.055, places=12)
        self.assertAlmostEqual(self.value(0.11 - 1e-12), 0.055, places=9)
        self.assertAlmostEqual(self.value(-1.11), 1.055, places=12)

    def test_mask_averages_over_matched_anchors(self):
        pred = DiffTensor(np.full((1, 3, 4), 1.11))
        mask = np.array([[True, False, False]])
        self.assertAlmostEqual(smooth_l1(pred, np.zeros((1, 3, 4)), mask=mask).item(), 1.055, places=10)
        self.assertEqual(smooth_l1(pred, np.zeros((1, 3, 4)), mask=np.zeros((1, 3), bool)).item(), 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ArgumentError):
            smooth_l1(DiffTensor(np.zeros((2, 4))), np.zeros((3, 4)))


class TemporalConsistencyTests(SimpleTestCase):
    def setUp(self):
        self.boxes = np.random.default_rng(2).standard_normal((1, 5, 4))

    def test_perfect_predictions(self):
        loss = temporal_consistency_loss(DiffTensor(self.boxes), self.boxes, DiffTensor(self.boxes),
                                         DiffTensor(self.boxes))
        self.assertEqual(loss.item(), 0.0)

    def test_second_term_only(self):
        loss = temporal_consistency_loss(DiffTensor(self.boxes), self.boxes, DiffTensor(self.boxes + 0.11),
                                         DiffTensor(self.boxes))
        self.assertAlmostEqual(loss.item(), 0.055, places=9)

    def test_no_previous_prediction(self):
        loss = temporal_consistency_loss(DiffTensor(self.boxes + 1.11), self.boxes, None, DiffTensor(self.boxes))
        self.assertAlmostEqual(loss.item(), 1.055, places=9)

    def test_anchor_misalignment(self):
        with self.assertRaises(ArgumentError):
            temporal_consistency_loss(DiffTensor(self.boxes), self.boxes, None, DiffTensor(np.zeros((1, 6, 4))))


class DetectionLossTests(SimpleTestCase):
    def targets(self, active=True):
        labels = np.array([[0, 2, 2]])
        positive = np.array([[True, False, False]])
        return StepTargets(
            labels=labels,
            deltas=np.zeros((1, 3, 4)),
            positive=positive,
            next_deltas=np.full((1, 3, 4), 0.5),
            next_positive=positive.copy(),
            active=np.array([active]),
        )

    def test_bundle_parts(self):
        logits = DiffTensor(np.zeros((1, 3, 3)), requires_grad=True)
        box_now = DiffTensor(np.full((1, 3, 4), 1.11), requires_grad=True)
        box_next = DiffTensor(np.full((1, 3, 4), 0.5), requires_grad=True)
        bundle = detection_loss(logits, box_now, box_next, self.targets())
        values = bundle.as_dict()
        self.assertAlmostEqual(values['loss_r'], 1.055, places=9)
        self.assertAlmostEqual(values['loss_t'], 0.0, places=12)
        self.assertAlmostEqual(values['loss'], values['loss_c'] + values['loss_r'] + values['loss_t'])
        self.assertGreater(values['loss_c'], 0.0)
        bundle.total.backward()
        self.assertIsNotNone(logits.grad)

    def test_consistency_disabled(self):
        box_next = DiffTensor(np.full((1, 3, 4), 3.0))
        bundle = detection_loss(DiffTensor(np.zeros((1, 3, 3))), DiffTensor(np.zeros((1, 3, 4))), box_next,
                                self.targets(), use_consistency=False)
        self.assertEqual(bundle.consistency.item(), 0.0)

    def test_inactive_sequence_contributes_nothing(self):
        bundle = detection_loss(DiffTensor(np.zeros((1, 3, 3))), DiffTensor(np.ones((1, 3, 4))),
                                DiffTensor(np.ones((1, 3, 4))), self.targets(active=False))
        self.assertEqual(bundle.as_dict()['loss'], 0.0)


class AdamTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameters(self):
        params = {'w': np.array([1.0, -2.0])}
        m, v = {'w': np.zeros(2)}, {'w': np.zeros(2)}
        step = adam_step(params, {'w': np.zeros(2)}, m, v, 0, lr=0.1)
        self.assertEqual(step, 1)
        np.testing.assert_array_equal(params['w'], [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        params = {'w': np.array([1.0, 1.0])}
        m, v = {'w': np.zeros(2)}, {'w': np.zeros(2)}
        adam_step(params, {'w': np.array([0.3, -7.0])}, m, v, 0, lr=1e-3)
        np.testing.assert_allclose(params['w'], [1.0 - 1e-3, 1.0 + 1e-3], rtol=1e-6)

    def test_quadratic_bowl(self):
        w = DiffTensor(np.array([3.0, -2.0]), requires_grad=True)
        optimizer = Adam({'w': w}, lr=0.05)
        norms = [float(np.linalg.norm(w.value))]
        for _ in range(100):
            optimizer.zero_grad()
            w.grad = 2.0 * w.value
            optimizer.step()
            norms.append(float(np.linalg.norm(w.value)))
        self.assertTrue(all(a > b for a, b in zip(norms[:30], norms[1:31])))
        self.assertLess(norms[-1], 0.5 * norms[0])

    def test_non_finite_gradient(self):
        params = {'w': np.array([1.0]), 'b': np.array([2.0])}
        m = {name: np.zeros(1) for name in params}
        v = {name: np.zeros(1) for name in params}
        with self.assertRaises(TrainingError) as ctx:
            adam_step(params, {'w': np.array([0.5]), 'b': np.array([np.nan])}, m, v, 0, lr=0.1)
        self.assertIn("'b'", str(ctx.exception))
        np.testing.assert_array_equal(params['w'], [1.0])

    def test_state_round_trip(self):
        w = DiffTensor(np.array([1.0, 2.0]), requires_grad=True)
        optimizer = Adam({'w': w})
        w.grad = np.array([0.1, 0.2])
        optimizer.step()
        restored = Adam({'w': DiffTensor(np.array([1.0, 2.0]), requires_grad=True)})
        restored.load_state_dict(optimizer.state_dict(), optimizer.step_count)
        self.assertEqual(restored.step_count, 1)
        np.testing.assert_array_equal(restored.m['w'], optimizer.m['w'])
        self.assertEqual(set(optimizer.state_dict()), {'adam.m/w', 'adam.v/w'})
