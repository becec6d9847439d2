"""SSD default boxes tiled over every recurrent feature level."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from event_detection.services.autodiff.ops import conv_output_size
from event_detection.services.detector.config import NetworkConfig


@dataclass(frozen=True)
class AnchorSet:
    """Anchors in sensor pixels, centre form, ordered level -> row -> column -> anchor."""

    boxes: np.ndarray
    level_shapes: tuple[tuple[int, int], ...]
    anchors_per_cell: int
    image_size: tuple[int, int]

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def level_slices(self) -> list[slice]:
        slices = []
        start = 0
        for height, width in self.level_shapes:
            stop = start + height * width * self.anchors_per_cell
            slices.append(slice(start, stop))
            start = stop
        return slices


def feature_shapes(cfg: NetworkConfig, height: int, width: int) -> list[tuple[int, int]]:
    """Spatial size of each recurrent level's output for a sensor of height x width."""
    if cfg.pre_pool:
        height, width = conv_output_size(height, 2), conv_output_size(width, 2)
    for stride in cfg.ff_strides:
        height, width = conv_output_size(height, stride), conv_output_size(width, stride)
    shapes = []
    for stride in cfg.rnn_strides:
        height, width = conv_output_size(height, stride), conv_output_size(width, stride)
        shapes.append((height, width))
    return shapes


def level_scales(cfg: NetworkConfig, levels: int) -> list[tuple[float, float]]:
    """Per level (s_l, sqrt(s_l * s_{l+1})) with s linear from min to max scale."""
    lo, hi = cfg.anchor_min_scale, cfg.anchor_max_scale
    if levels == 1:
        return [(lo, math.sqrt(lo * hi))]
    step = (hi - lo) / (levels - 1)
    scales = [lo + step * level for level in range(levels + 1)]
    return [(scales[l], math.sqrt(scales[l] * min(scales[l + 1], 1.0))) for l in range(levels)]


def generate_anchors(cfg: NetworkConfig, input_dims: tuple[int, int]) -> AnchorSet:
    """Anchors for a sensor of input_dims = (width, height).

    Sizes are fractions of the shorter sensor side; each cell gets, for each of
    the two scales, one anchor per aspect ratio r with w = s * sqrt(r) and
    h = s / sqrt(r).
    """
    width, height = input_dims
    shapes = feature_shapes(cfg, height, width)
    reference = float(min(width, height))
    shape_list = []
    for scale_pair in level_scales(cfg, len(shapes)):
        for scale in scale_pair:
            for ratio in cfg.anchor_ratios:
                shape_list.append((scale * reference * math.sqrt(ratio), scale * reference / math.sqrt(ratio)))
    per_cell = cfg.anchors_per_cell
    blocks = []
    for level, (rows, cols) in enumerate(shapes):
        sizes = np.asarray(shape_list[level * per_cell:(level + 1) * per_cell], dtype=np.float64)
        cy = (np.arange(rows) + 0.5) * height / rows
        cx = (np.arange(cols) + 0.5) * width / cols
        grid_y, grid_x = np.meshgrid(cy, cx, indexing='ij')
        centers = np.stack([grid_x, grid_y], axis=-1).reshape(rows * cols, 1, 2)
        centers = np.broadcast_to(centers, (rows * cols, per_cell, 2))
        wh = np.broadcast_to(sizes[None, :, :], (rows * cols, per_cell, 2))
        blocks.append(np.concatenate([centers, wh], axis=-1).reshape(-1, 4))
    boxes = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, 4))
    return AnchorSet(boxes, tuple(shapes), per_cell, (width, height))
