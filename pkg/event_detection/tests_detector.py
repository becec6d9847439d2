import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError, ModelConfigError
from event_detection.services.autodiff import no_grad
from event_detection.services.detector.anchors import feature_shapes, generate_anchors
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.model import build_model
from event_detection.services.losses import init_focal_biases


def softmax(values):
    shifted = np.exp(values - values.max())
    return shifted / shifted.sum()


class FocalBiasTests(SimpleTestCase):
    def test_background_prior_for_several_class_counts(self):
        for num_classes in (1, 3, 10):
            probs = softmax(init_focal_biases(num_classes, 0.99))
            self.assertEqual(probs.shape, (num_classes + 1,))
            self.assertAlmostEqual(float(probs[-1]), 0.99, delta=1e-6)
            np.testing.assert_allclose(probs[:-1], 0.01 / num_classes, atol=1e-6)

    def test_invalid_prior(self):
        with self.assertRaises(ArgumentError):
            init_focal_biases(3, 1.0)
        with self.assertRaises(ArgumentError):
            init_focal_biases(0)

    def test_untrained_model_predicts_background(self):
        model = build_model(NetworkConfig.toy(channels=8, in_channels=2, num_classes=3), seed=0).eval()
        for name, tensor in model.parameters().items():
            if name.startswith('head_cls.level') and name.endswith('.weight'):
                tensor.value[...] = 0.0
        with no_grad():
            output, _ = model.step(np.random.default_rng(0).random((2, 32, 32)))
        logits = output.cls_logits.value[0]
        probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        np.testing.assert_allclose(probs[:, -1], 0.99, atol=1e-5)


class ParameterCountTests(SimpleTestCase):
    def test_default_plan_size(self):
        model = build_model(NetworkConfig(), seed=0)
        count = model.parameter_count()
        self.assertGreater(count, 24.1e6 * 0.8)
        self.assertLess(count, 24.1e6 * 1.2)
        card = model.model_card()
        self.assertEqual(card['parameter_count'], count)
        self.assertEqual(sum(card['parameters_by_block'].values()), count)

    def test_plan_mismatch(self):
        with self.assertRaises(ModelConfigError):
            build_model(NetworkConfig.toy(kf=2))
        with self.assertRaises(ModelConfigError):
            build_model(NetworkConfig.toy(kr=2, rnn_channels=(8, 16), rnn_strides=(2, 2)))

    def test_invalid_config_values(self):
        with self.assertRaises(ValueError):
            NetworkConfig(anchor_ratios=())
        with self.assertRaises(ValueError):
            NetworkConfig(unknown_field=1)


class ToyDetectorTests(SimpleTestCase):
    def setUp(self):
        self.cfg = NetworkConfig.toy(channels=8, in_channels=2, num_classes=3)
        self.model = build_model(self.cfg, seed=7).eval()
        self.rng = np.random.default_rng(0)

    def test_output_shapes_and_anchors(self):
        output, state = self.model.step(self.rng.random((2, 64, 64)))
        anchors = self.model.anchors(64, 64)
        self.assertEqual(feature_shapes(self.cfg, 64, 64), [(8, 8)])
        self.assertEqual(len(anchors), 8 * 8 * 6)
        self.assertEqual(output.cls_logits.shape, (1, len(anchors), 4))
        self.assertEqual(output.box_now.shape, (1, len(anchors), 4))
        self.assertEqual(output.box_next.shape, (1, len(anchors), 4))
        self.assertEqual(state.shapes(), [(1, 8, 8, 8)])

    def test_second_head_optional(self):
        model = build_model(NetworkConfig.toy(channels=8, in_channels=2, second_head=False)).eval()
        output, _ = model.step(self.rng.random((2, 32, 32)))
        self.assertIsNone(output.box_next)
        self.assertNotIn('head_box_next', model.model_card()['parameters_by_block'])

    def test_same_seed_same_weights(self):
        other = build_model(self.cfg, seed=7)
        for name, value in self.model.state_dict().items():
            np.testing.assert_array_equal(value, other.state_dict()[name])
        different = build_model(self.cfg, seed=8)
        self.assertFalse(np.array_equal(self.model.state_dict()['stem.conv.weight'],
                                        different.state_dict()['stem.conv.weight']))

    def test_state_carries_information(self):
        first = self.rng.random((2, 32, 32))
        second = self.rng.random((2, 32, 32))
        with no_grad():
            _, state = self.model.step(first)
            carried, _ = self.model.step(second, state)
            fresh, _ = self.model.step(second)
        self.assertFalse(np.allclose(carried.box_now.value, fresh.box_now.value))

    def test_force_zero_state_ignores_the_carried_state(self):
        model = build_model(NetworkConfig.toy(channels=8, in_channels=2, force_zero_state=True), seed=7).eval()
        first = self.rng.random((2, 32, 32))
        second = self.rng.random((2, 32, 32))
        with no_grad():
            _, state = model.step(first)
            carried, _ = model.step(second, state)
            fresh, _ = model.step(second)
        np.testing.assert_array_equal(carried.box_now.value, fresh.box_now.value)
        np.testing.assert_array_equal(carried.cls_logits.value, fresh.cls_logits.value)

    def test_forward_sequence_matches_steps(self):
        inputs = [self.rng.random((2, 32, 32)) for _ in range(3)]
        with no_grad():
            outputs, final = self.model.forward_sequence(inputs)
            state = None
            for x, expected in zip(inputs, outputs):
                output, state = self.model.step(x, state)
                np.testing.assert_array_equal(output.cls_logits.value, expected.cls_logits.value)
        np.testing.assert_array_equal(final.snapshot()[0][0], state.snapshot()[0][0])

    def test_input_validation(self):
        with self.assertRaises(ModelConfigError):
            self.model.step(self.rng.random((3, 32, 32)))
        _, state = self.model.step(self.rng.random((2, 32, 32)))
        with self.assertRaises(ModelConfigError):
            self.model.step(self.rng.random((2, 64, 64)), state)

    def test_initial_state_matches_step_state(self):
        state = self.model.initial_state(1, 64, 48)
        _, next_state = self.model.step(self.rng.random((2, 64, 48)), state)
        self.assertEqual(state.shapes(), next_state.shapes())
        self.assertFalse(state.snapshot()[0][0].any())

    def test_load_state_dict_round_trip(self):
        other = build_model(self.cfg, seed=99).eval()
        other.load_state_dict(self.model.state_dict())
        x = self.rng.random((2, 32, 32))
        with no_grad():
            expected, _ = self.model.step(x)
            got, _ = other.step(x)
        np.testing.assert_array_equal(expected.box_now.value, got.box_now.value)


class AnchorTests(SimpleTestCase):
    def test_levels_and_geometry(self):
        cfg = NetworkConfig.desk(in_channels=2)
        anchors = generate_anchors(cfg, (256, 256))
        shapes = feature_shapes(cfg, 256, 256)
        self.assertEqual(shapes, [(8, 8), (4, 4), (2, 2)])
        self.assertEqual(len(anchors), sum(h * w for h, w in shapes) * 6)
        slices = anchors.level_slices()
        self.assertEqual(slices[-1].stop, len(anchors))
        coarse = anchors.boxes[slices[-1]]
        fine = anchors.boxes[slices[0]]
        self.assertGreater(coarse[:, 2:].mean(), fine[:, 2:].mean())
        self.assertTrue(np.all((anchors.boxes[:, 0] > 0) & (anchors.boxes[:, 0] < 256)))
        square = anchors.boxes[1]
        self.assertAlmostEqual(square[2], square[3])
