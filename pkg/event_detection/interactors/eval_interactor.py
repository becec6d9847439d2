import logging

import numpy as np

from event_detection.exceptions import ArgumentError
from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.evaluation import evaluate, track_iou_curve
from event_detection.storage.box_storage import read_box_frames
from event_detection.storage.event_storage import read_stream
from event_detection.storage.report_storage import write_curve_csv, write_table_csv

logger = logging.getLogger(__name__)

PER_CLASS_FILE = 'per_class_ap.csv'
TRACK_IOU_FILE = 'track_iou.csv'


def step_timestamps(delta_t: int, frames) -> list[int]:
    """Detector step ends k * delta_t covering the labels; steps with no boxes leave no line in a label file."""
    if delta_t <= 0:
        raise ArgumentError(f'--delta-t must be positive, got {delta_t}.')
    last = max((frame.t for frame in frames), default=0)
    return list(range(delta_t, last + delta_t + 1, delta_t))


class EvalInteractor(PipelineInteractor):
    command = 'eval'

    def execute(self, context: RunContext, detections: str, labels: str, delta_t: int | None = None,
                events: str | None = None) -> dict:
        cfg = context.config.eval
        dets = read_box_frames(detections)
        gts = read_box_frames(labels)
        stream = read_stream(events) if events else None
        if cfg.warmup_mode == 'event_fraction' and stream is None:
            raise ArgumentError('warmup_mode "event_fraction" needs --events.')
        if delta_t is None:
            delta_t = context.config.inference.delta_t_us
        report = evaluate(dets, gts, cfg, step_timestamps(delta_t, gts), stream)
        write_table_csv(
            [{'class_id': class_id, 'ap': ap} for class_id, ap in sorted(report.per_class_ap.items())],
            context.out_dir / PER_CLASS_FILE,
        )
        logger.info('mAP %.4f over %d timestamps', report.map, report.num_timestamps)
        return report.as_dict()


class TrackIouInteractor(PipelineInteractor):
    command = 'track_iou'

    def execute(self, context: RunContext, detections: str, labels: str, bins: int = 100,
                delta_t: int | None = None) -> dict:
        if bins < 1:
            raise ArgumentError(f'--bins must be >= 1, got {bins}.')
        dets = read_box_frames(detections)
        gts = read_box_frames(labels)
        if delta_t is None:
            delta_t = context.config.inference.delta_t_us
        curve = track_iou_curve(dets, gts, bins, context.config.eval.tolerance_us, step_timestamps(delta_t, gts))
        path = write_curve_csv(curve, context.out_dir / TRACK_IOU_FILE)
        return {
            'bins': bins,
            'tracks_found': bool(curve.size),
            'mean_iou': float(np.mean(curve)) if curve.size else None,
            'curve_path': str(path),
        }
