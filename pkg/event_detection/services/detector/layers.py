"""Parameterised building blocks; each registers its tensors under a name prefix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from event_detection.services.autodiff import ops
from event_detection.services.autodiff.registry import ParameterRegistry
from event_detection.services.autodiff.tensor import DiffTensor


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d:

    def __init__(self, registry: ParameterRegistry, name: str, in_channels: int, out_channels: int,
                 kernel: int, stride: int = 1, bias: bool = True, rng: np.random.Generator | None = None,
                 init_std: float | None = None):
        rng = rng or np.random.default_rng(0)
        shape = (out_channels, in_channels, kernel, kernel)
        if init_std is None:
            weight = he_normal(rng, shape, in_channels * kernel * kernel)
        else:
            weight = (rng.standard_normal(shape) * init_std).astype(np.float32)
        self.weight = registry.add_parameter(f'{name}.weight', weight)
        self.bias = registry.add_parameter(f'{name}.bias', np.zeros(out_channels)) if bias else None
        self.stride = stride

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm2d:

    def __init__(self, registry: ParameterRegistry, name: str, channels: int, momentum: float = 0.9):
        self.gamma = registry.add_parameter(f'{name}.gamma', np.ones(channels))
        self.beta = registry.add_parameter(f'{name}.beta', np.zeros(channels))
        self.running_mean = registry.add_buffer(f'{name}.running_mean', np.zeros(channels))
        self.running_var = registry.add_buffer(f'{name}.running_var', np.ones(channels))
        self.momentum = momentum

    def __call__(self, x: DiffTensor, training: bool) -> DiffTensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               training=training, momentum=self.momentum)


class Dense:

    def __init__(self, registry: ParameterRegistry, name: str, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = ops.xavier_bound(in_features, out_features)
        weight = rng.uniform(-bound, bound, size=(in_features, out_features)).astype(np.float32)
        self.weight = registry.add_parameter(f'{name}.weight', weight)
        self.bias = registry.add_parameter(f'{name}.bias', np.zeros(out_features))

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return ops.dense(x, self.weight, self.bias)


class BNConvReLU:

    def __init__(self, registry, name, in_channels, out_channels, kernel, stride, rng, momentum=0.9,
                 activation: bool = True):
        self.bn = BatchNorm2d(registry, f'{name}.bn', in_channels, momentum)
        self.conv = Conv2d(registry, f'{name}.conv', in_channels, out_channels, kernel, stride, rng=rng)
        self.activation = activation

    def __call__(self, x: DiffTensor, training: bool) -> DiffTensor:
        out = self.conv(self.bn(x, training))
        return ops.relu(out) if self.activation else out


class SqueezeExciteBlock:
    """BNConvReLU(stride) -> BNConvReLU -> BNConv, channel gating from a pooled two-layer MLP, projected skip-sum."""

    def __init__(self, registry, name, in_channels, out_channels, stride, reduction, rng, momentum=0.9, kernel=3):
        self.layer1 = BNConvReLU(registry, f'{name}.layer1', in_channels, out_channels, kernel, stride, rng, momentum)
        self.layer2 = BNConvReLU(registry, f'{name}.layer2', out_channels, out_channels, kernel, 1, rng, momentum)
        self.layer3 = BNConvReLU(registry, f'{name}.layer3', out_channels, out_channels, kernel, 1, rng, momentum,
                                 activation=False)
        squeezed = max(out_channels // reduction, 1)
        self.squeeze = Dense(registry, f'{name}.squeeze', out_channels, squeezed, rng)
        self.excite = Dense(registry, f'{name}.excite', squeezed, out_channels, rng)
        if in_channels != out_channels or stride != 1:
            self.skip = Conv2d(registry, f'{name}.skip', in_channels, out_channels, 1, stride, rng=rng)
        else:
            self.skip = None

    def __call__(self, x: DiffTensor, training: bool) -> DiffTensor:
        out = self.layer3(self.layer2(self.layer1(x, training), training), training)
        gate = ops.sigmoid(self.excite(ops.relu(self.squeeze(ops.global_avg_pool(out)))))
        n, c = gate.shape
        out = out * ops.reshape(gate, (n, c, 1, 1))
        residual = self.skip(x) if self.skip is not None else x
        return out + residual


@dataclass
class CellState:
    h: DiffTensor
    c: DiffTensor


class ConvLSTMCell:
    """ConvLSTM with a BatchNorm + strided conv input path and a plain conv hidden path.

    Gate blocks along the channel axis are ordered input, forget, output, candidate.
    """

    GATES = ('input', 'forget', 'output', 'candidate')

    def __init__(self, registry, name, in_channels, hidden_channels, kernel, stride, rng,
                 forget_bias: float = 1.0, momentum: float = 0.9):
        self.hidden_channels = hidden_channels
        self.stride = stride
        self.bn = BatchNorm2d(registry, f'{name}.bn', in_channels, momentum)
        self.input_conv = Conv2d(registry, f'{name}.input_conv', in_channels, 4 * hidden_channels, kernel,
                                 stride, bias=True, rng=rng)
        self.hidden_conv = Conv2d(registry, f'{name}.hidden_conv', hidden_channels, 4 * hidden_channels, kernel,
                                  1, bias=False, rng=rng, init_std=np.sqrt(1.0 / (hidden_channels * kernel * kernel)))
        self.input_conv.bias.value[hidden_channels:2 * hidden_channels] = forget_bias

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        return ops.conv_output_size(height, self.stride), ops.conv_output_size(width, self.stride)

    def zero_state(self, batch: int, height: int, width: int, dtype=np.float32) -> CellState:
        out_h, out_w = self.output_size(height, width)
        shape = (batch, self.hidden_channels, out_h, out_w)
        return CellState(DiffTensor(np.zeros(shape, dtype=dtype)), DiffTensor(np.zeros(shape, dtype=dtype)))

    def step(self, x: DiffTensor, state: CellState, training: bool) -> CellState:
        gates = self.input_conv(self.bn(x, training)) + self.hidden_conv(state.h)
        i, f, o, g = ops.split_channels(gates, 4)
        c_next = ops.sigmoid(f) * state.c + ops.sigmoid(i) * ops.tanh(g)
        h_next = ops.sigmoid(o) * ops.tanh(c_next)
        return CellState(h_next, c_next)
