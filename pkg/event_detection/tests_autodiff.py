import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import GradientCheckError, GraphConstructionError, ModelConfigError
from event_detection.services.autodiff import DiffTensor, OpGraph, ParameterRegistry, check_gradients, no_grad
from event_detection.services.autodiff import ops
from event_detection.services.detector.layers import CellState, ConvLSTMCell, SqueezeExciteBlock
from event_detection.services.losses import smooth_l1, softmax_focal_loss, temporal_consistency_loss


def param(value, name='x'):
    return DiffTensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)


def away_from_zero(rng, shape, margin=0.1):
    magnitude = rng.uniform(margin, 1.0, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


class ElementwiseGradientTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def check(self, op, value):
        x = param(value)
        weights = self.rng.standard_normal(x.shape)
        graph = OpGraph(lambda: ops.reduce_sum(op(x) * weights), {'x': x})
        report = check_gradients(graph)
        self.assertTrue(report.passed, report.as_dict())

    def test_unary_ops(self):
        shape = (3, 4)
        self.check(ops.relu, away_from_zero(self.rng, shape))
        self.check(ops.sigmoid, self.rng.standard_normal(shape))
        self.check(ops.tanh, self.rng.standard_normal(shape))
        self.check(ops.exp, self.rng.standard_normal(shape))
        self.check(ops.log, self.rng.uniform(0.5, 2.0, shape))
        self.check(ops.absolute, away_from_zero(self.rng, shape))

    def test_arithmetic_with_broadcast(self):
        a = param(self.rng.standard_normal((2, 3)), 'a')
        b = param(self.rng.uniform(0.5, 1.5, (3,)), 'b')
        graph = OpGraph(lambda: ops.reduce_sum((a * b - a / b + 2.0 - b) ** 2), {'a': a, 'b': b})
        self.assertTrue(check_gradients(graph).passed)

    def test_shape_ops(self):
        x = param(self.rng.standard_normal((2, 6, 3)))
        weights = self.rng.standard_normal((3, 2, 6))

        def forward():
            moved = ops.transpose(ops.reshape(x, (2, 6, 3)), (2, 0, 1))
            first, second = ops.split_channels(ops.reshape(x, (2, 6, 3, 1)), 2)
            joined = ops.concat([second, first], axis=1)
            return ops.reduce_sum(moved * weights) + ops.reduce_sum(ops.mean(joined * joined, axis=(1, 2)))

        self.assertTrue(check_gradients(OpGraph(forward, {'x': x})).passed)

    def test_softmax_family(self):
        x = param(self.rng.standard_normal((4, 5)))
        weights = self.rng.standard_normal((4, 5))
        graph = OpGraph(lambda: ops.reduce_sum(ops.softmax(x, axis=-1) * weights)
                        + ops.reduce_sum(ops.log_softmax(x, axis=-1) * weights), {'x': x})
        self.assertTrue(check_gradients(graph).passed)

    def test_smooth_l1_both_regions(self):
        beta = 0.11
        values = self.rng.uniform(-0.5, 0.5, (6, 4))
        values[np.abs(np.abs(values) - beta) < 0.01] += 0.05
        self.check(lambda d: ops.smooth_l1_elementwise(d, beta), values)


class LayerGradientTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_dense(self):
        x = param(self.rng.standard_normal((3, 4)), 'x')
        w = param(self.rng.standard_normal((4, 2)), 'w')
        b = param(self.rng.standard_normal(2), 'b')
        weights = self.rng.standard_normal((3, 2))
        graph = OpGraph(lambda: ops.reduce_sum(ops.dense(x, w, b) * weights), {'x': x, 'w': w, 'b': b})
        self.assertTrue(check_gradients(graph).passed)

    def test_conv2d_same_and_strided(self):
        x = param(self.rng.standard_normal((2, 3, 7, 6)), 'x')
        w = param(self.rng.standard_normal((4, 3, 3, 3)) * 0.3, 'w')
        b = param(self.rng.standard_normal(4), 'b')
        for stride in (1, 2):
            weights = self.rng.standard_normal(ops.conv2d(x, w, b, stride=stride).shape)
            graph = OpGraph(lambda: ops.reduce_sum(ops.conv2d(x, w, b, stride=stride) * weights),
                            {'x': x, 'w': w, 'b': b})
            report = check_gradients(graph, max_entries=48)
            self.assertTrue(report.passed, report.as_dict())

    def test_conv2d_output_size(self):
        x = DiffTensor(np.zeros((1, 2, 9, 8)))
        w = DiffTensor(np.zeros((5, 2, 3, 3)))
        self.assertEqual(ops.conv2d(x, w, stride=2).shape, (1, 5, 5, 4))
        with self.assertRaises(GraphConstructionError):
            ops.conv2d(x, DiffTensor(np.zeros((5, 3, 3, 3))))

    def test_pooling(self):
        values = (self.rng.permutation(2 * 3 * 5 * 5) * 0.01).reshape(2, 3, 5, 5)
        x = param(values)
        weights_max = self.rng.standard_normal(ops.max_pool2d(x).shape)
        weights_avg = self.rng.standard_normal(ops.avg_pool2d(x).shape)
        graph = OpGraph(lambda: ops.reduce_sum(ops.max_pool2d(x) * weights_max)
                        + ops.reduce_sum(ops.avg_pool2d(x) * weights_avg)
                        + ops.reduce_sum(ops.global_avg_pool(x)), {'x': x})
        self.assertEqual(ops.max_pool2d(x).shape, (2, 3, 3, 3))
        self.assertTrue(check_gradients(graph, max_entries=64).passed)

    def test_batchnorm_training_and_eval(self):
        x = param(self.rng.standard_normal((3, 2, 4, 4)) * 2.0 + 1.0, 'x')
        gamma = param(self.rng.uniform(0.5, 1.5, 2), 'gamma')
        beta = param(self.rng.standard_normal(2), 'beta')
        running_mean, running_var = np.zeros(2), np.ones(2)
        weights = self.rng.standard_normal(x.shape)
        for training in (True, False):
            graph = OpGraph(
                lambda: ops.reduce_sum(ops.batchnorm2d(x, gamma, beta, running_mean, running_var, training) * weights),
                {'x': x, 'gamma': gamma, 'beta': beta},
                {'running_mean': running_mean, 'running_var': running_var},
            )
            report = check_gradients(graph, max_entries=48)
            self.assertTrue(report.passed, report.as_dict())
        np.testing.assert_allclose(running_mean, 0.0)
        np.testing.assert_allclose(running_var, 1.0)

    def test_batchnorm_updates_running_buffers(self):
        x = DiffTensor(np.full((2, 1, 2, 2), 3.0))
        running_mean, running_var = np.zeros(1), np.ones(1)
        ops.batchnorm2d(x, DiffTensor(np.ones(1)), DiffTensor(np.zeros(1)), running_mean, running_var,
                        training=True, momentum=0.9)
        self.assertAlmostEqual(float(running_mean[0]), 0.3)
        self.assertAlmostEqual(float(running_var[0]), 0.9)

    def test_squeeze_excite_block_shapes(self):
        registry = ParameterRegistry()
        block = SqueezeExciteBlock(registry, 'se', 3, 4, 2, 2, self.rng)
        out = block(DiffTensor(self.rng.standard_normal((2, 3, 6, 6))), True)
        self.assertEqual(out.shape, (2, 4, 3, 3))
        self.assertIn('se.skip.weight', registry.parameters())
        self.assertEqual(registry.parameters()['se.squeeze.weight'].shape, (4, 2))


class ConvLSTMGradientTests(SimpleTestCase):
    def test_one_step_from_a_nonzero_state(self):
        rng = np.random.default_rng(2)
        registry = ParameterRegistry()
        cell = ConvLSTMCell(registry, 'cell', 3, 4, 3, 2, rng)
        x = DiffTensor(rng.standard_normal((2, 3, 6, 6)))
        state = CellState(DiffTensor(rng.standard_normal((2, 4, 3, 3)) * 0.5),
                          DiffTensor(rng.standard_normal((2, 4, 3, 3)) * 0.5))
        w_h, w_c = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((2, 4, 3, 3))

        def forward():
            nxt = cell.step(x, state, training=True)
            return ops.reduce_sum(nxt.h * w_h) + ops.reduce_sum(nxt.c * w_c)

        report = check_gradients(OpGraph(forward, registry.parameters(), registry.buffers()), max_entries=24)
        self.assertTrue(report.passed, report.as_dict())
        self.assertIn('cell.hidden_conv.weight', report.errors)

    def test_state_gradient_reaches_previous_hidden(self):
        rng = np.random.default_rng(3)
        registry = ParameterRegistry()
        cell = ConvLSTMCell(registry, 'cell', 2, 3, 3, 1, rng)
        h = param(rng.standard_normal((1, 3, 4, 4)) * 0.5, 'h')
        c = param(rng.standard_normal((1, 3, 4, 4)) * 0.5, 'c')
        x = DiffTensor(rng.standard_normal((1, 2, 4, 4)))
        graph = OpGraph(lambda: ops.reduce_sum(cell.step(x, CellState(h, c), training=False).h), {'h': h, 'c': c})
        self.assertTrue(check_gradients(graph).passed)

    def test_forget_bias_initialised(self):
        registry = ParameterRegistry()
        cell = ConvLSTMCell(registry, 'cell', 2, 3, 3, 1, np.random.default_rng(0), forget_bias=1.0)
        np.testing.assert_array_equal(cell.input_conv.bias.value[3:6], 1.0)
        np.testing.assert_array_equal(cell.input_conv.bias.value[:3], 0.0)


class LossGradientTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)

    def test_focal_loss(self):
        logits = param(self.rng.standard_normal((2, 6, 4)))
        target = self.rng.integers(0, 4, (2, 6))
        weights = np.ones((2, 6))
        weights[1] = 0.0
        graph = OpGraph(lambda: softmax_focal_loss(logits, target, 2.0, weights), {'logits': logits})
        self.assertTrue(check_gradients(graph).passed)

    def test_smooth_l1_with_mask(self):
        pred = param(self.rng.uniform(-1, 1, (2, 5, 4)))
        target = pred.value + self.rng.choice([-0.3, -0.05, 0.04, 0.25], size=pred.shape)
        mask = self.rng.random((2, 5)) > 0.4
        mask[0, 0] = True
        graph = OpGraph(lambda: smooth_l1(pred, target, 0.11, mask), {'pred': pred})
        self.assertTrue(check_gradients(graph).passed)

    def test_consistency_loss_stops_gradient_at_first_head(self):
        next_pred = param(self.rng.uniform(-1, 1, (1, 6, 4)), 'next_pred')
        now_second = param(self.rng.uniform(-1, 1, (1, 6, 4)), 'now_second')
        now_first = param(now_second.value + self.rng.choice([-0.4, -0.05, 0.06, 0.3], size=(1, 6, 4)), 'now_first')
        next_target = next_pred.value + 0.2
        graph = OpGraph(lambda: temporal_consistency_loss(next_pred, next_target, now_second, now_first),
                        {'next_pred': next_pred, 'now_second': now_second})
        self.assertTrue(check_gradients(graph).passed)

        loss = temporal_consistency_loss(next_pred, next_target, now_second, now_first)
        loss.backward()
        self.assertIsNone(now_first.grad)
        self.assertIsNotNone(now_second.grad)


class GradientCheckTests(SimpleTestCase):
    def wrong_square(self, x):
        return DiffTensor.from_op(x.value ** 2, (x,), lambda grad: (grad * x.value,))

    def test_wrong_backward_is_reported(self):
        x = param(np.array([1.0, 2.0, -1.5]))
        graph = OpGraph(lambda: ops.reduce_sum(self.wrong_square(x)), {'x': x})
        with self.assertRaises(GradientCheckError) as ctx:
            check_gradients(graph)
        self.assertFalse(ctx.exception.report.passed)
        report = check_gradients(graph, raise_on_failure=False)
        self.assertGreater(report.max_error, 0.4)

    def test_values_restored_after_check(self):
        x = DiffTensor(np.array([0.5, -0.25], dtype=np.float32), requires_grad=True)
        check_gradients(OpGraph(lambda: ops.reduce_sum(x * x), {'x': x}))
        self.assertEqual(x.value.dtype, np.float32)
        self.assertIsNone(x.grad)


class TensorTests(SimpleTestCase):
    def test_no_grad_records_nothing(self):
        x = param([1.0, 2.0])
        with no_grad():
            y = ops.reduce_sum(x * x)
        self.assertFalse(y.requires_grad)
        self.assertTrue(y.is_leaf)

    def test_gradients_accumulate_over_shared_nodes(self):
        x = param([3.0])
        y = x * x + x
        ops.reduce_sum(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_rank_limit(self):
        with self.assertRaises(GraphConstructionError):
            DiffTensor(np.zeros((1,) * 6))

    def test_incompatible_broadcast(self):
        with self.assertRaises(GraphConstructionError):
            param(np.zeros((2, 3))) + param(np.zeros((4,)))


class ParameterRegistryTests(SimpleTestCase):
    def setUp(self):
        self.registry = ParameterRegistry()
        self.registry.add_parameter('layer.weight', np.ones((2, 2)))
        self.registry.add_buffer('layer.running_mean', np.zeros(2))

    def test_duplicate_name(self):
        with self.assertRaises(GraphConstructionError):
            self.registry.add_parameter('layer.weight', np.ones(1))

    def test_state_dict_prefixes_buffers(self):
        state = self.registry.state_dict()
        self.assertEqual(set(state), {'layer.weight', 'buffer/layer.running_mean'})
        self.assertEqual(self.registry.count('layer'), 4)

    def test_strict_load_requires_every_tensor(self):
        with self.assertRaises(ModelConfigError):
            self.registry.load_state_dict({'layer.weight': np.zeros((2, 2))})
        self.registry.load_state_dict({'layer.weight': np.zeros((2, 2))}, strict=False)
        np.testing.assert_array_equal(self.registry['layer.weight'].value, 0.0)
