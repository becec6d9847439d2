"""Recurrent event detector: BN-Conv-ReLU stem, Squeeze-Excite blocks, ConvLSTM stack and SSD heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from event_detection.exceptions import ModelConfigError
from event_detection.services.autodiff import ops
from event_detection.services.autodiff.registry import ParameterRegistry
from event_detection.services.autodiff.tensor import DiffTensor
from event_detection.services.detector.anchors import AnchorSet, generate_anchors
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.layers import (
    BNConvReLU,
    CellState,
    Conv2d,
    ConvLSTMCell,
    SqueezeExciteBlock,
)
from event_detection.services.losses import init_focal_biases
from event_detection.services.representations import ReprTensor, downsample_2x2

logger = logging.getLogger(__name__)

HEAD_INIT_STD = 0.01


@dataclass
class RecurrentState:
    cells: list[CellState]

    def detach(self) -> 'RecurrentState':
        return RecurrentState([CellState(cell.h.detach(), cell.c.detach()) for cell in self.cells])

    def shapes(self) -> list[tuple[int, ...]]:
        return [cell.h.shape for cell in self.cells]

    def snapshot(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(cell.h.value.copy(), cell.c.value.copy()) for cell in self.cells]

    @classmethod
    def restore(cls, snapshot: list[tuple[np.ndarray, np.ndarray]]) -> 'RecurrentState':
        return cls([CellState(DiffTensor(h.copy()), DiffTensor(c.copy())) for h, c in snapshot])

    def select(self, indices) -> 'RecurrentState':
        """Keep only the given batch rows (values only)."""
        return RecurrentState([
            CellState(DiffTensor(cell.h.value[indices]), DiffTensor(cell.c.value[indices])) for cell in self.cells
        ])


@dataclass
class HeadOutput:
    """Per-anchor predictions, anchors ordered level -> row -> column -> anchor."""

    cls_logits: DiffTensor
    box_now: DiffTensor
    box_next: DiffTensor | None


class HeadBranch:
    """One shared conv + ReLU applied to every level, then a per-level 1x1 predictor."""

    def __init__(self, registry, name, in_channels, head_channels, kernel, levels, outputs_per_anchor,
                 anchors_per_cell, rng, bias_per_anchor: np.ndarray | None = None):
        self.shared = Conv2d(registry, f'{name}.shared', in_channels, head_channels, kernel, 1, rng=rng,
                             init_std=HEAD_INIT_STD)
        self.outputs_per_anchor = outputs_per_anchor
        self.predictors = []
        for level in range(levels):
            predictor = Conv2d(registry, f'{name}.level{level}', head_channels, anchors_per_cell * outputs_per_anchor,
                               1, 1, rng=rng, init_std=HEAD_INIT_STD)
            if bias_per_anchor is not None:
                predictor.bias.value[...] = np.tile(bias_per_anchor, anchors_per_cell)
            self.predictors.append(predictor)

    def __call__(self, features: list[DiffTensor]) -> DiffTensor:
        per_level = []
        for feature, predictor in zip(features, self.predictors):
            out = predictor(ops.relu(self.shared(feature)))
            n, _, height, width = out.shape
            out = ops.transpose(out, (0, 2, 3, 1))
            per_level.append(ops.reshape(out, (n, height * width * (out.shape[3] // self.outputs_per_anchor),
                                                self.outputs_per_anchor)))
        return per_level[0] if len(per_level) == 1 else ops.concat(per_level, axis=1)


class DetectorModel:

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        cfg.validate_plan()
        self.cfg = cfg
        self.registry = ParameterRegistry()
        self.training = True
        rng = np.random.default_rng(seed)
        momentum = cfg.bn_momentum

        self.stem = BNConvReLU(self.registry, 'stem', cfg.in_channels, cfg.ff_channels[0], cfg.ff_kernels[0],
                               cfg.ff_strides[0], rng, momentum)
        self.blocks = [
            SqueezeExciteBlock(self.registry, f'se{i}', cfg.ff_channels[i - 1], cfg.ff_channels[i],
                               cfg.ff_strides[i], cfg.se_reduction, rng, momentum, kernel=cfg.ff_kernels[i])
            for i in range(1, cfg.kf)
        ]
        in_channels = cfg.ff_channels[-1]
        self.cells = []
        for i in range(cfg.kr):
            self.cells.append(ConvLSTMCell(self.registry, f'convlstm{i}', in_channels, cfg.rnn_channels[i],
                                           cfg.rnn_kernel, cfg.rnn_strides[i], rng, cfg.forget_bias, momentum))
            in_channels = cfg.rnn_channels[i]

        per_cell = cfg.anchors_per_cell
        cls_bias = init_focal_biases(cfg.num_classes, cfg.prior_background)
        self.cls_head = HeadBranch(self.registry, 'head_cls', in_channels, cfg.head_channels, cfg.head_kernel,
                                   cfg.kr, cfg.num_classes + 1, per_cell, rng, cls_bias)
        self.box_head = HeadBranch(self.registry, 'head_box', in_channels, cfg.head_channels, cfg.head_kernel,
                                   cfg.kr, 4, per_cell, rng)
        self.next_head = None
        if cfg.second_head:
            self.next_head = HeadBranch(self.registry, 'head_box_next', in_channels, cfg.head_channels,
                                        cfg.head_kernel, cfg.kr, 4, per_cell, rng)
        logger.info('Built detector with %d parameters (K_f=%d, K_r=%d)', self.parameter_count(), cfg.kf, cfg.kr)

    # mode

    def train(self, mode: bool = True) -> 'DetectorModel':
        self.training = mode
        return self

    def eval(self) -> 'DetectorModel':
        return self.train(False)

    # parameters

    def parameters(self) -> dict[str, DiffTensor]:
        return self.registry.parameters()

    def parameter_count(self, prefix: str = '') -> int:
        return self.registry.count(prefix)

    def state_dict(self) -> dict[str, np.ndarray]:
        return self.registry.state_dict()

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        self.registry.load_state_dict(state, strict)

    def anchors(self, width: int, height: int) -> AnchorSet:
        return generate_anchors(self.cfg, (width, height))

    def model_card(self) -> dict:
        groups = ['stem'] + [f'se{i}' for i in range(1, self.cfg.kf)] + [f'convlstm{i}' for i in range(self.cfg.kr)]
        groups += ['head_cls', 'head_box'] + (['head_box_next'] if self.next_head else [])
        return {
            'architecture': 'squeeze-excite + convlstm + ssd',
            'network': self.cfg.model_dump(mode='json'),
            'parameter_count': self.parameter_count(),
            'parameters_by_block': {group: self.parameter_count(group + '.') for group in groups},
            'anchors_per_cell': self.cfg.anchors_per_cell,
        }

    # state

    def _recurrent_input_size(self, height: int, width: int) -> tuple[int, int]:
        for stride in self.cfg.ff_strides:
            height, width = ops.conv_output_size(height, stride), ops.conv_output_size(width, stride)
        return height, width

    def _state_shapes(self, batch: int, height: int, width: int) -> list[tuple[int, ...]]:
        """height/width are the network input size after pre-pooling."""
        height, width = self._recurrent_input_size(height, width)
        shapes = []
        for cell in self.cells:
            height, width = cell.output_size(height, width)
            shapes.append((batch, cell.hidden_channels, height, width))
        return shapes

    def _zero_state(self, batch: int, height: int, width: int, dtype=np.float32) -> RecurrentState:
        return RecurrentState([
            CellState(DiffTensor(np.zeros(shape, dtype=dtype)), DiffTensor(np.zeros(shape, dtype=dtype)))
            for shape in self._state_shapes(batch, height, width)
        ])

    def initial_state(self, batch: int, sensor_height: int, sensor_width: int) -> RecurrentState:
        """All-zero state for inputs of the given sensor resolution."""
        if self.cfg.pre_pool:
            sensor_height = ops.conv_output_size(sensor_height, 2)
            sensor_width = ops.conv_output_size(sensor_width, 2)
        return self._zero_state(batch, sensor_height, sensor_width)

    # forward

    def _prepare_input(self, x) -> DiffTensor:
        if isinstance(x, ReprTensor):
            x = x.values
        if isinstance(x, DiffTensor):
            if x.ndim == 3:
                x = ops.reshape(x, (1,) + x.shape)
            return ops.avg_pool2d(x, 2, 2) if self.cfg.pre_pool else x
        values = np.asarray(x, dtype=np.float32)
        if values.ndim == 3:
            values = values[None]
        if values.ndim != 4:
            raise ModelConfigError(f'Detector input must be (C, H, W) or (N, C, H, W), got {values.shape}.')
        if self.cfg.pre_pool:
            values = downsample_2x2(values)
        return DiffTensor(values)

    def step(self, x, state: RecurrentState | None = None) -> tuple[HeadOutput, RecurrentState]:
        """One time step: returns the head outputs and the state h_k to carry forward."""
        x = self._prepare_input(x)
        if x.shape[1] != self.cfg.in_channels:
            raise ModelConfigError(f'Detector expects {self.cfg.in_channels} input channels, got {x.shape[1]}.')
        batch, _, height, width = x.shape
        if state is None or self.cfg.force_zero_state:
            state = self._zero_state(batch, height, width, x.dtype)
        expected = self._state_shapes(batch, height, width)
        if state.shapes() != expected:
            raise ModelConfigError(f'Recurrent state shapes {state.shapes()} do not match model shapes {expected}.')

        features = self.stem(x, self.training)
        for block in self.blocks:
            features = block(features, self.training)
        new_cells = []
        for cell, cell_state in zip(self.cells, state.cells):
            cell_state = cell.step(features, cell_state, self.training)
            new_cells.append(cell_state)
            features = cell_state.h
        levels = [cell_state.h for cell_state in new_cells]
        output = HeadOutput(
            cls_logits=self.cls_head(levels),
            box_now=self.box_head(levels),
            box_next=self.next_head(levels) if self.next_head is not None else None,
        )
        return output, RecurrentState(new_cells)

    def forward_sequence(self, inputs, state: RecurrentState | None = None) -> tuple[list[HeadOutput], RecurrentState]:
        outputs = []
        for x in inputs:
            output, state = self.step(x, state)
            outputs.append(output)
        return outputs, state


def build_model(cfg: NetworkConfig, seed: int = 0) -> DetectorModel:
    return DetectorModel(cfg, seed)
