"""Streaming detection: slice, represent, step the recurrent detector, decode and suppress."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from event_detection.exceptions import ArgumentError, SequencingError
from event_detection.services.autodiff import ops
from event_detection.services.autodiff.tensor import no_grad
from event_detection.services.boxes import Box, BoxFrame, clip_box, decode_boxes, nms_indices
from event_detection.services.detector.model import DetectorModel, HeadOutput, RecurrentState
from event_detection.services.events_core import EventStream, TimeSlice, slice_by_time
from event_detection.services.representations import ReprConfig, ReprTensor, build_representation

logger = logging.getLogger(__name__)


class InferenceConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    delta_t_us: int = Field(default=50_000, gt=0)
    score_thresh: float = Field(default=0.5, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.5, gt=0.0, le=1.0)
    max_detections: int = Field(default=100, ge=1)
    use_next_head: bool = False
    prefetch: bool = True


@dataclass
class SessionMetrics:
    steps: int = 0
    events: int = 0
    forward_seconds: float = 0.0
    wall_seconds: float = 0.0

    def as_dict(self) -> dict:
        wall = self.wall_seconds or float('nan')
        return {
            'steps': self.steps,
            'events': self.events,
            'forward_seconds': round(self.forward_seconds, 6),
            'wall_seconds': round(self.wall_seconds, 6),
            'events_per_second': self.events / wall if self.wall_seconds else 0.0,
            'steps_per_second': self.steps / wall if self.wall_seconds else 0.0,
        }


def decode_head_output(output: HeadOutput, anchors_cxcywh: np.ndarray, t: int, width: int, height: int,
                       cfg: InferenceConfig, batch_index: int = 0) -> BoxFrame:
    """Softmax scores, box decoding against the anchors, clipping and per-class NMS for one batch row."""
    probs = ops.softmax(output.cls_logits, axis=-1).value[batch_index]
    deltas = (output.box_next if cfg.use_next_head and output.box_next is not None else output.box_now)
    deltas = deltas.value[batch_index].astype(np.float64)
    object_probs = probs[:, :-1]
    classes = object_probs.argmax(axis=1)
    scores = object_probs[np.arange(object_probs.shape[0]), classes]
    candidates = np.flatnonzero(scores >= cfg.score_thresh)
    if candidates.size == 0:
        return BoxFrame(t)
    xywh = decode_boxes(deltas[candidates], anchors_cxcywh[candidates])
    keep = nms_indices(xywh, scores[candidates], classes[candidates], cfg.nms_iou, cfg.score_thresh,
                       cfg.max_detections)
    boxes = []
    for i in keep:
        x, y, w, h = xywh[i]
        if not (w > 0 and h > 0 and np.isfinite(xywh[i]).all()):
            continue
        box = clip_box(Box(float(x), float(y), float(w), float(h), int(classes[candidates[i]]), t=t,
                           confidence=float(scores[candidates[i]])), width, height)
        if box is not None:
            boxes.append(box)
    return BoxFrame(t, tuple(boxes))


@dataclass
class SessionSnapshot:
    cursor: int
    state: list[tuple[np.ndarray, np.ndarray]] | None


@dataclass
class DetectorSession:
    """Stateful detector over one stream; t_k advances by exactly delta_t per step."""

    model: DetectorModel
    repr_cfg: ReprConfig
    width: int
    height: int
    cfg: InferenceConfig = field(default_factory=InferenceConfig)
    cursor: int = 0
    state: RecurrentState | None = None
    metrics: SessionMetrics = field(default_factory=SessionMetrics)

    def __post_init__(self):
        self.model.eval()
        self._anchors = self.model.anchors(self.width, self.height).boxes

    @property
    def delta_t(self) -> int:
        return self.cfg.delta_t_us

    def reset(self):
        self.cursor = 0
        self.state = None

    def snapshot(self) -> SessionSnapshot:
        return SessionSnapshot(self.cursor, self.state.snapshot() if self.state is not None else None)

    def restore(self, snapshot: SessionSnapshot):
        self.cursor = snapshot.cursor
        self.state = RecurrentState.restore(snapshot.state) if snapshot.state is not None else None

    def _check_slice(self, time_slice: TimeSlice):
        expected = (self.cursor, self.cursor + self.delta_t)
        if (time_slice.t_start, time_slice.t_end) != expected:
            raise SequencingError(
                f'Expected slice [{expected[0]}, {expected[1]}), got [{time_slice.t_start}, {time_slice.t_end}).'
            )
        if (time_slice.width, time_slice.height) != (self.width, self.height):
            raise ArgumentError(
                f'Slice sensor {time_slice.width}x{time_slice.height} differs from session {self.width}x{self.height}.'
            )

    def _advance(self, time_slice: TimeSlice, representation: ReprTensor) -> BoxFrame:
        started = time.perf_counter()
        with no_grad():
            output, self.state = self.model.step(representation, self.state)
        self.metrics.forward_seconds += time.perf_counter() - started
        self.metrics.steps += 1
        self.metrics.events += len(time_slice)
        self.cursor = time_slice.t_end
        return decode_head_output(output, self._anchors, time_slice.t_end, self.width, self.height, self.cfg)

    def step(self, time_slice: TimeSlice) -> BoxFrame:
        """Detections timestamped t_k for the slice [t_{k-1}, t_k); empty slices still step the state."""
        self._check_slice(time_slice)
        return self._advance(time_slice, build_representation(time_slice, self.repr_cfg))

    def run_slices(self, slices: list[TimeSlice]) -> list[BoxFrame]:
        """Fold step over the slices; with prefetch, slice k+1 is represented while slice k runs."""
        started = time.perf_counter()
        frames = []
        if not self.cfg.prefetch or len(slices) < 2:
            frames = [self.step(time_slice) for time_slice in slices]
        else:
            with ThreadPoolExecutor(max_workers=1) as executor:
                pending = executor.submit(build_representation, slices[0], self.repr_cfg)
                for index, time_slice in enumerate(slices):
                    self._check_slice(time_slice)
                    representation = pending.result()
                    if index + 1 < len(slices):
                        pending = executor.submit(build_representation, slices[index + 1], self.repr_cfg)
                    frames.append(self._advance(time_slice, representation))
        self.metrics.wall_seconds += time.perf_counter() - started
        return frames

    def run_stream(self, stream: EventStream, t_end: int | None = None) -> list[BoxFrame]:
        if (stream.width, stream.height) != (self.width, self.height):
            raise ArgumentError(f'Stream sensor {stream.width}x{stream.height} differs from session.')
        slices = slice_by_time(stream, self.delta_t, t_end)
        if self.cursor:
            slices = [s for s in slices if s.t_start >= self.cursor]
        frames = self.run_slices(slices)
        logger.info('Detected over %d slices, %d boxes', len(frames), sum(len(frame) for frame in frames))
        return frames


def detect_stream(model: DetectorModel, stream: EventStream, repr_cfg: ReprConfig,
                  cfg: InferenceConfig | None = None) -> tuple[list[BoxFrame], dict]:
    session = DetectorSession(model, repr_cfg, stream.width, stream.height, cfg or InferenceConfig())
    frames = session.run_stream(stream)
    return frames, session.metrics.as_dict()
