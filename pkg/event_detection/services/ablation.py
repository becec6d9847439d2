"""Ablation runs: the same training recipe with memory, consistency loss or representation switched."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from event_detection.exceptions import ArgumentError
from event_detection.services.detector.model import build_model
from event_detection.services.evaluation import StopInterval, evaluate_sequences, retention_rate, track_iou_curve
from event_detection.services.inference import DetectorSession, InferenceConfig
from event_detection.services.representations import ReprConfig, channel_count
from event_detection.services.run_config import RunConfig
from event_detection.services.training import TrainingSequence, load_detector, train

logger = logging.getLogger(__name__)

BASELINE = 'baseline'


@dataclass(frozen=True)
class AblationCondition:
    name: str
    force_zero_state: bool = False
    use_consistency: bool = True
    repr_kind: str | None = None

    def as_dict(self) -> dict:
        return {
            'condition': self.name,
            'force_zero_state': self.force_zero_state,
            'use_consistency': self.use_consistency,
            'repr_kind': self.repr_kind,
        }


@dataclass
class TestSequence:
    sequence: TrainingSequence
    stops: list[StopInterval] = field(default_factory=list)


@dataclass
class AblationResult:
    rows: list[dict]
    summary: list[dict]
    curves: dict[str, np.ndarray]


def ablation_conditions(no_memory: bool = False, no_consistency: bool = False,
                        repr_kinds: list[str] | tuple[str, ...] = ()) -> list[AblationCondition]:
    conditions = [AblationCondition(BASELINE)]
    if no_memory:
        conditions.append(AblationCondition('no_memory', force_zero_state=True))
    if no_consistency:
        conditions.append(AblationCondition('no_consistency', use_consistency=False))
    for kind in repr_kinds:
        conditions.append(AblationCondition(f'repr_{kind}', repr_kind=kind))
    return conditions


def condition_config(base: RunConfig, condition: AblationCondition, seed: int) -> RunConfig:
    """Resolved configuration of one (condition, seed) cell; network input channels follow the representation."""
    repr_cfg = base.repr
    if condition.repr_kind is not None:
        repr_cfg = ReprConfig(**{**base.repr.model_dump(), 'kind': condition.repr_kind})
    return base.with_overrides(
        repr=repr_cfg.model_dump(mode='json'),
        network={'force_zero_state': condition.force_zero_state, 'in_channels': channel_count(repr_cfg)},
        train={'seed': seed, 'use_consistency': condition.use_consistency},
    )


def _mean(values: list[float]) -> float:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(finite)) if finite else float('nan')


def score_detector(model, repr_cfg: ReprConfig, config: RunConfig, test: list[TestSequence],
                   bins: int = 100) -> tuple[dict, np.ndarray]:
    """mAP, mean track-IoU curve and stop retention of one trained detector over the test sequences."""
    inference_cfg = InferenceConfig(delta_t_us=config.train.delta_t_us, score_thresh=config.train.val_score_thresh,
                                    prefetch=False)
    items, curves, retention = [], [], []
    for item in test:
        stream, frames = item.sequence.stream, item.sequence.frames
        session = DetectorSession(model, repr_cfg, stream.width, stream.height, inference_cfg)
        dets = session.run_stream(stream, frames[-1].t if frames else None)
        det_timestamps = [frame.t for frame in dets]
        items.append((dets, frames, det_timestamps))
        curve = track_iou_curve(dets, frames, bins, config.eval.tolerance_us, det_timestamps)
        if curve.size:
            curves.append(curve)
        if item.stops:
            retention.append(retention_rate(dets, frames, item.stops, tolerance_us=config.eval.tolerance_us))
    report = evaluate_sequences(items, config.eval)
    curve = np.mean(curves, axis=0) if curves else np.zeros(0)
    metrics = {
        'map': report.map,
        'map_50': report.map_50,
        'track_iou_mean': float(curve.mean()) if curve.size else float('nan'),
        'retention_rate': _mean(retention),
    }
    return metrics, curve


def run_ablation(base: RunConfig, conditions: list[AblationCondition], seeds: list[int],
                 train_set: list[TrainingSequence], test_set: list[TestSequence], out_dir: str | Path,
                 bins: int = 100) -> AblationResult:
    if not conditions:
        raise ArgumentError('At least one ablation condition is required.')
    if not seeds:
        raise ArgumentError('At least one seed is required.')
    out_dir = Path(out_dir)
    rows, curves = [], {}
    for condition in conditions:
        condition_curves = []
        for seed in seeds:
            config = condition_config(base, condition, seed)
            run_dir = out_dir / condition.name / f'seed_{seed}'
            logger.info('Ablation %s seed %d -> %s', condition.name, seed, run_dir)
            model = build_model(config.network, seed)
            result = train(model, train_set, config.train, config.repr, run_dir)
            if result.best_checkpoint is not None:
                model, _ = load_detector(result.best_checkpoint)
            metrics, curve = score_detector(model, config.repr, config, test_set, bins)
            rows.append({**condition.as_dict(), 'seed': seed, **metrics})
            if curve.size:
                condition_curves.append(curve)
        curves[condition.name] = np.mean(condition_curves, axis=0) if condition_curves else np.zeros(0)
    summary = []
    for condition in conditions:
        cell = [row for row in rows if row['condition'] == condition.name]
        summary.append({
            **condition.as_dict(),
            'seeds': len(cell),
            'map': _mean([row['map'] for row in cell]),
            'track_iou_mean': _mean([row['track_iou_mean'] for row in cell]),
            'retention_rate': _mean([row['retention_rate'] for row in cell]),
        })
    return AblationResult(rows, summary, curves)
