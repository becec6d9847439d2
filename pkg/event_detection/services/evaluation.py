"""Event-adapted COCO mAP, track IoU over normalised track time, and the stopped-object retention rate."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from event_detection.services.boxes import BoxFrame, filter_boxes, iou_matrix
from event_detection.services.events_core import EventStream

logger = logging.getLogger(__name__)

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    iou_thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
    tolerance_us: int = Field(default=5_000, ge=0)
    warmup_us: int = Field(default=500_000, ge=0)
    warmup_mode: Literal['time', 'event_fraction'] = 'time'
    min_event_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    min_diag: float = Field(default=60.0, ge=0.0)
    min_side: float = Field(default=20.0, ge=0.0)
    max_detections: int = Field(default=100, ge=1)
    ignore_iou: float = Field(default=0.5, gt=0.0, le=1.0)

    @field_validator('iou_thresholds')
    @classmethod
    def ascending_in_unit_interval(cls, value):
        if not value:
            raise ValueError('at least one IoU threshold is required')
        if any(not 0.0 < v <= 1.0 for v in value):
            raise ValueError('IoU thresholds must lie in (0, 1]')
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError('IoU thresholds must be strictly ascending')
        return value


@dataclass
class EvalReport:
    map: float
    map_50: float
    map_75: float
    per_class_ap: dict[int, float]
    num_detections: int
    num_ground_truth: int
    num_timestamps: int
    empty: bool = False

    def as_dict(self) -> dict:
        return {
            'mAP': self.map,
            'mAP_50': self.map_50,
            'mAP_75': self.map_75,
            'per_class_ap': {str(k): v for k, v in sorted(self.per_class_ap.items())},
            'num_detections': self.num_detections,
            'num_ground_truth': self.num_ground_truth,
            'num_timestamps': self.num_timestamps,
            'empty': self.empty,
        }


def pair_timestamps(query: Sequence[int], reference: Sequence[int], tolerance: int) -> np.ndarray:
    """Index of the nearest reference timestamp within tolerance for every query, -1 when none."""
    query = np.asarray(query, dtype=np.int64)
    reference = np.asarray(reference, dtype=np.int64)
    result = np.full(query.shape[0], -1, dtype=np.int64)
    if reference.size == 0 or query.size == 0:
        return result
    right = np.clip(np.searchsorted(reference, query, side='left'), 0, reference.size - 1)
    left = np.clip(right - 1, 0, reference.size - 1)
    pick = np.where(np.abs(reference[left] - query) <= np.abs(reference[right] - query), left, right)
    close = np.abs(reference[pick] - query) <= tolerance
    result[close] = pick[close]
    return result


def paired_frames(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], tolerance: int,
                  det_timestamps: Sequence[int] | None = None) -> list[tuple[BoxFrame, BoxFrame]]:
    """(detections, ground truth) pairs at timestamps where both are available.

    Detection timestamps default to those of the detection frames; a frame-less
    detection source evaluates every GT timestamp against zero detections. Each GT
    frame is paired with at most one detection timestamp, the nearest.
    """
    gts = sorted(gts, key=lambda frame: frame.t)
    by_time = {frame.t: frame for frame in dets}
    if det_timestamps is None:
        det_timestamps = sorted(by_time) if by_time else [frame.t for frame in gts]
    det_timestamps = sorted(set(int(t) for t in det_timestamps))
    matches = pair_timestamps(det_timestamps, [frame.t for frame in gts], tolerance)
    best: dict[int, int] = {}
    for det_index, gt_index in enumerate(matches):
        if gt_index < 0:
            continue
        distance = abs(det_timestamps[det_index] - gts[gt_index].t)
        current = best.get(int(gt_index))
        if current is None or distance < abs(det_timestamps[current] - gts[gt_index].t):
            best[int(gt_index)] = det_index
    pairs = []
    for gt_index in sorted(best):
        t = det_timestamps[best[gt_index]]
        pairs.append((by_time.get(t, BoxFrame(t)), gts[gt_index]))
    return pairs


def _active_pixel_fraction(stream: EventStream, frame: BoxFrame) -> np.ndarray:
    """Fraction of pixels inside each GT box that fired at least once before the frame time."""
    events = stream.events[:np.searchsorted(stream.events['t'], frame.t, side='left')]
    active = np.zeros((stream.height, stream.width), dtype=bool)
    active[events['y'], events['x']] = True
    integral = np.pad(active.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    fractions = []
    for box in frame.boxes:
        x1, y1 = int(np.clip(np.floor(box.x), 0, stream.width)), int(np.clip(np.floor(box.y), 0, stream.height))
        x2 = int(np.clip(np.ceil(box.x + box.w), 0, stream.width))
        y2 = int(np.clip(np.ceil(box.y + box.h), 0, stream.height))
        area = max((x2 - x1) * (y2 - y1), 1)
        count = integral[y2, x2] - integral[y1, x2] - integral[y2, x1] + integral[y1, x1]
        fractions.append(count / area)
    return np.asarray(fractions, dtype=np.float64)


def _drop_ignored(det_frame: BoxFrame, gt_frame: BoxFrame, ignored: np.ndarray, ignore_iou: float):
    kept_gt = tuple(box for box, skip in zip(gt_frame.boxes, ignored) if not skip)
    ignored_gt = [box for box, skip in zip(gt_frame.boxes, ignored) if skip]
    if not ignored_gt or not det_frame.boxes:
        return det_frame, BoxFrame(gt_frame.t, kept_gt)
    overlaps = iou_matrix(det_frame.xywh(), np.asarray([box.xywh for box in ignored_gt]))
    same_class = det_frame.classes()[:, None] == np.asarray([box.class_id for box in ignored_gt])[None, :]
    drop = ((overlaps >= ignore_iou) & same_class).any(axis=1)
    kept_dets = tuple(box for box, skip in zip(det_frame.boxes, drop) if not skip)
    return BoxFrame(det_frame.t, kept_dets), BoxFrame(gt_frame.t, kept_gt)


def prepare_pairs(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], cfg: EvalConfig,
                  det_timestamps: Sequence[int] | None = None,
                  stream: EventStream | None = None) -> list[tuple[BoxFrame, BoxFrame]]:
    """Pairing, warmup handling and size filtering shared by evaluate()."""
    prepared = []
    for det_frame, gt_frame in paired_frames(dets, gts, cfg.tolerance_us, det_timestamps):
        if gt_frame.t < cfg.warmup_us:
            if cfg.warmup_mode == 'time' or stream is None:
                continue
            ignored = _active_pixel_fraction(stream, gt_frame) < cfg.min_event_fraction
            det_frame, gt_frame = _drop_ignored(det_frame, gt_frame, ignored, cfg.ignore_iou)
        det_frame = filter_boxes(det_frame, cfg.min_diag, cfg.min_side)
        gt_frame = filter_boxes(gt_frame, cfg.min_diag, cfg.min_side)
        if len(det_frame) > cfg.max_detections:
            order = np.argsort(-det_frame.scores(), kind='stable')[:cfg.max_detections]
            det_frame = BoxFrame(det_frame.t, tuple(det_frame.boxes[i] for i in sorted(order)))
        prepared.append((det_frame, gt_frame))
    return prepared


def match_frame(det_frame: BoxFrame, gt_frame: BoxFrame, class_id: int, thresholds: Sequence[float]):
    """Greedy COCO matching of one class in one frame.

    Returns (scores, true-positive matrix of shape (detections, thresholds), GT count).
    Detections are visited by descending score (stable); each takes the unmatched
    GT with the highest IoU at or above the threshold.
    """
    det_idx = [i for i, box in enumerate(det_frame.boxes) if box.class_id == class_id]
    gt_idx = [i for i, box in enumerate(gt_frame.boxes) if box.class_id == class_id]
    scores = np.asarray([det_frame.boxes[i].confidence for i in det_idx], dtype=np.float64)
    order = np.argsort(-scores, kind='stable')
    scores = scores[order]
    tp = np.zeros((len(det_idx), len(thresholds)), dtype=bool)
    if det_idx and gt_idx:
        det_xywh = np.asarray([det_frame.boxes[det_idx[i]].xywh for i in order])
        gt_xywh = np.asarray([gt_frame.boxes[i].xywh for i in gt_idx])
        overlaps = iou_matrix(det_xywh, gt_xywh)
        for t_index, threshold in enumerate(thresholds):
            taken = np.zeros(len(gt_idx), dtype=bool)
            for d in range(len(det_idx)):
                candidates = np.where(taken, -1.0, overlaps[d])
                best = int(np.argmax(candidates))
                if candidates[best] >= threshold:
                    taken[best] = True
                    tp[d, t_index] = True
    return scores, tp, len(gt_idx)


@dataclass
class EvalAccumulator:
    """Per-class detection scores and match flags; merging is associative."""

    thresholds: tuple[float, ...]
    scores: dict[int, list[np.ndarray]] = field(default_factory=dict)
    matches: dict[int, list[np.ndarray]] = field(default_factory=dict)
    gt_counts: dict[int, int] = field(default_factory=dict)
    num_detections: int = 0
    num_timestamps: int = 0

    def add_frame(self, det_frame: BoxFrame, gt_frame: BoxFrame):
        self.num_timestamps += 1
        self.num_detections += len(det_frame)
        classes = {box.class_id for box in det_frame.boxes} | {box.class_id for box in gt_frame.boxes}
        for class_id in classes:
            scores, tp, gt_count = match_frame(det_frame, gt_frame, class_id, self.thresholds)
            self.scores.setdefault(class_id, []).append(scores)
            self.matches.setdefault(class_id, []).append(tp)
            self.gt_counts[class_id] = self.gt_counts.get(class_id, 0) + gt_count

    def merge(self, other: 'EvalAccumulator') -> 'EvalAccumulator':
        merged = EvalAccumulator(self.thresholds)
        for source in (self, other):
            for class_id, items in source.scores.items():
                merged.scores.setdefault(class_id, []).extend(items)
            for class_id, items in source.matches.items():
                merged.matches.setdefault(class_id, []).extend(items)
            for class_id, count in source.gt_counts.items():
                merged.gt_counts[class_id] = merged.gt_counts.get(class_id, 0) + count
        merged.num_detections = self.num_detections + other.num_detections
        merged.num_timestamps = self.num_timestamps + other.num_timestamps
        return merged

    def class_ap(self, class_id: int) -> np.ndarray:
        """101-point interpolated AP per IoU threshold."""
        n_gt = self.gt_counts.get(class_id, 0)
        scores = np.concatenate(self.scores.get(class_id, [np.zeros(0)]))
        matches = self.matches.get(class_id, [])
        tp = np.concatenate(matches, axis=0) if matches else np.zeros((0, len(self.thresholds)), dtype=bool)
        order = np.argsort(-scores, kind='stable')
        tp = tp[order]
        ap = np.zeros(len(self.thresholds), dtype=np.float64)
        if n_gt == 0 or tp.shape[0] == 0:
            return ap
        tp_sum = np.cumsum(tp, axis=0, dtype=np.float64)
        fp_sum = np.cumsum(~tp, axis=0, dtype=np.float64)
        for t_index in range(len(self.thresholds)):
            recall = tp_sum[:, t_index] / n_gt
            precision = tp_sum[:, t_index] / (tp_sum[:, t_index] + fp_sum[:, t_index])
            precision = np.maximum.accumulate(precision[::-1])[::-1]
            picks = np.searchsorted(recall, RECALL_POINTS, side='left')
            sampled = np.where(picks < precision.size, precision[np.minimum(picks, precision.size - 1)], 0.0)
            ap[t_index] = sampled.mean()
        return ap

    def report(self) -> EvalReport:
        classes = sorted(c for c, count in self.gt_counts.items() if count > 0)
        num_gt = int(sum(self.gt_counts.values()))
        if not classes:
            if self.num_timestamps == 0:
                logger.warning('Evaluation found no timestamps shared by detections and ground truth')
            return EvalReport(0.0, 0.0, 0.0, {}, self.num_detections, num_gt, self.num_timestamps,
                              empty=self.num_timestamps == 0)
        per_threshold = np.stack([self.class_ap(c) for c in classes])
        thresholds = np.asarray(self.thresholds)

        def at(value: float) -> float:
            hits = np.flatnonzero(np.isclose(thresholds, value))
            return float(per_threshold[:, hits[0]].mean()) if hits.size else float('nan')

        return EvalReport(
            map=float(per_threshold.mean()),
            map_50=at(0.5),
            map_75=at(0.75),
            per_class_ap={c: float(per_threshold[i].mean()) for i, c in enumerate(classes)},
            num_detections=self.num_detections,
            num_ground_truth=num_gt,
            num_timestamps=self.num_timestamps,
        )


def accumulate(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], cfg: EvalConfig,
               det_timestamps: Sequence[int] | None = None, stream: EventStream | None = None) -> EvalAccumulator:
    accumulator = EvalAccumulator(tuple(cfg.iou_thresholds))
    for det_frame, gt_frame in prepare_pairs(dets, gts, cfg, det_timestamps, stream):
        accumulator.add_frame(det_frame, gt_frame)
    return accumulator


def evaluate(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], cfg: EvalConfig | None = None,
             det_timestamps: Sequence[int] | None = None, stream: EventStream | None = None) -> EvalReport:
    """COCO-style mAP over the timestamps where detections and labels coexist."""
    cfg = cfg or EvalConfig()
    return accumulate(dets, gts, cfg, det_timestamps, stream).report()


def evaluate_sequences(items: Iterable[tuple], cfg: EvalConfig | None = None) -> EvalReport:
    """Accumulate several (dets, gts[, det_timestamps[, stream]]) sequences into one report."""
    cfg = cfg or EvalConfig()
    total = EvalAccumulator(tuple(cfg.iou_thresholds))
    for item in items:
        total = total.merge(accumulate(*item[:2], cfg, *item[2:]))
    return total.report()


def track_iou_curve(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], bins: int = 100,
                    tolerance_us: int = 5_000, det_timestamps: Sequence[int] | None = None) -> np.ndarray:
    """Mean over GT tracks of the best same-class detection IoU against normalised track time.

    Only GT samples paired with a detection timestamp count. Bin b takes the IoU of
    the track sample whose normalised time is nearest to the bin centre (b + 0.5) / bins.
    """
    tracks: dict[int, list[tuple[int, float]]] = {}
    for det_frame, gt_frame in paired_frames(dets, gts, tolerance_us, det_timestamps):
        det_xywh = det_frame.xywh()
        det_classes = det_frame.classes()
        for box in gt_frame.boxes:
            if box.track_id < 0:
                continue
            same = det_classes == box.class_id
            value = 0.0
            if same.any():
                value = float(iou_matrix(np.asarray([box.xywh]), det_xywh[same]).max())
            tracks.setdefault(box.track_id, []).append((gt_frame.t, value))
    if not tracks:
        logger.warning('No ground-truth tracks overlap the detections; track IoU curve is empty')
        return np.zeros(0, dtype=np.float64)
    centers = (np.arange(bins) + 0.5) / bins
    curves = []
    for samples in tracks.values():
        samples.sort()
        times = np.asarray([t for t, _ in samples], dtype=np.float64)
        values = np.asarray([v for _, v in samples], dtype=np.float64)
        duration = times[-1] - times[0]
        if duration <= 0:
            curves.append(np.full(bins, values[0]))
            continue
        normalized = (times - times[0]) / duration
        nearest = np.abs(normalized[None, :] - centers[:, None]).argmin(axis=1)
        curves.append(values[nearest])
    return np.mean(curves, axis=0)


@dataclass(frozen=True)
class StopInterval:
    track_id: int
    t_start: int
    t_end: int


def retention_rate(dets: Sequence[BoxFrame], gts: Sequence[BoxFrame], stops: Sequence[StopInterval],
                   min_steps: int = 10, iou_thresh: float = 0.5, tolerance_us: int = 5_000) -> float:
    """Share of stop intervals during which the stopped object stays detected for min_steps detector steps.

    Intervals covering fewer than min_steps detection timestamps are skipped;
    returns nan when none qualify.
    """
    pairs = paired_frames(dets, gts, tolerance_us)
    qualified = retained = 0
    for stop in stops:
        window = [(d, g) for d, g in pairs if stop.t_start <= g.t < stop.t_end]
        if len(window) < min_steps:
            continue
        qualified += 1
        held = 0
        for det_frame, gt_frame in window[:min_steps]:
            target = [box for box in gt_frame.boxes if box.track_id == stop.track_id]
            if not target or not det_frame.boxes:
                break
            same = det_frame.classes() == target[0].class_id
            if not same.any():
                break
            if iou_matrix(np.asarray([target[0].xywh]), det_frame.xywh()[same]).max() < iou_thresh:
                break
            held += 1
        retained += held == min_steps
    if qualified == 0:
        logger.warning('No stop interval spans %d detector steps', min_steps)
        return float('nan')
    return retained / qualified
