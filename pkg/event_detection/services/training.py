"""Truncated BPTT training of the recurrent detector with Adam, checkpoints and a JSON-lines metrics log."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from event_detection.exceptions import ArgumentError, ConfigError, TrainingError
from event_detection.services.boxes import BoxFrame, encode_boxes, filter_boxes, match_anchors
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.model import DetectorModel, RecurrentState, build_model
from event_detection.services.evaluation import EvalConfig, evaluate_sequences, pair_timestamps
from event_detection.services.events_core import EventStream, TimeSlice, slice_by_time
from event_detection.services.inference import DetectorSession, InferenceConfig
from event_detection.services.losses import LossBundle, StepTargets, detection_loss
from event_detection.services.optimizer import Adam
from event_detection.services.representations import ReprConfig, build_representation
from event_detection.storage.report_storage import append_jsonl
from event_detection.storage.tensor_storage import load_checkpoint, resolve_checkpoint_prefix, save_checkpoint

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.jsonl'


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    delta_t_us: int = Field(default=50_000, gt=0)
    tbptt_steps: int = Field(default=10, ge=1)
    batch_size: int = Field(default=2, ge=1)
    epochs: int = Field(default=20, ge=1)
    lr: float = Field(default=2e-4, gt=0.0)
    lr_decay: float = Field(default=0.98, gt=0.0, le=1.0)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    seed: int = Field(default=0, ge=0)
    warmup_us: int = Field(default=500_000, ge=0)
    label_tolerance_us: int = Field(default=5_000, ge=0)
    match_iou: float = Field(default=0.5, gt=0.0, le=1.0)
    min_diag: float = Field(default=60.0, ge=0.0)
    min_side: float = Field(default=20.0, ge=0.0)
    gamma: float = Field(default=2.0, ge=0.0)
    beta: float = Field(default=0.11, gt=0.0)
    use_consistency: bool = True
    val_score_thresh: float = Field(default=0.05, ge=0.0, le=1.0)
    workers: int = Field(default=1, ge=1)

    @field_validator('betas')
    @classmethod
    def betas_in_unit_interval(cls, value):
        if any(not 0.0 <= b < 1.0 for b in value):
            raise ValueError('Adam betas must lie in [0, 1)')
        return value

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch


@dataclass
class TrainingSequence:
    name: str
    stream: EventStream
    frames: list[BoxFrame]

    def slices(self, delta_t: int) -> list[TimeSlice]:
        t_end = max(self.stream.t_end, self.frames[-1].t if self.frames else 0)
        if len(self.stream) == 0 and not self.frames:
            return []
        return slice_by_time(self.stream, delta_t, t_end)


@dataclass
class TrainState:
    """Everything besides tensors needed to resume exactly."""

    epoch: int = 0
    global_step: int = 0
    best_metric: float | None = None
    rng_state: dict | None = None
    adam_step: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'TrainState':
        return cls(**{key: data.get(key, default) for key, default in asdict(cls()).items()})


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict] = field(default_factory=list)
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None


@dataclass
class PreparedSequence:
    """Slices plus, per step, the filtered GT frame paired with t_k (None when unlabelled)."""

    name: str
    slices: list[TimeSlice]
    labels: list[BoxFrame | None]

    def __len__(self) -> int:
        return len(self.slices)


def prepare_sequence(sequence: TrainingSequence, cfg: TrainConfig) -> PreparedSequence:
    slices = sequence.slices(cfg.delta_t_us)
    step_times = [s.t_end for s in slices]
    frames = sorted(sequence.frames, key=lambda frame: frame.t)
    pairs = pair_timestamps(step_times, [frame.t for frame in frames], cfg.label_tolerance_us)
    labels = [
        filter_boxes(frames[index], cfg.min_diag, cfg.min_side) if index >= 0 else None
        for index in pairs
    ]
    return PreparedSequence(sequence.name, slices, labels)


def build_step_targets(labels: list[BoxFrame | None], next_labels: list[BoxFrame | None], step_times: list[int],
                       anchors_cxcywh: np.ndarray, num_classes: int, cfg: TrainConfig) -> StepTargets:
    """Anchor targets for one step of a batch.

    A row is active only after warmup and when a GT frame is paired with t_k. Next-step
    targets follow each matched GT's track into the frame paired with t_{k+1}.
    """
    batch, num_anchors = len(labels), anchors_cxcywh.shape[0]
    class_targets = np.full((batch, num_anchors), num_classes, dtype=np.int64)
    deltas = np.zeros((batch, num_anchors, 4), dtype=np.float64)
    positive = np.zeros((batch, num_anchors), dtype=bool)
    next_deltas = np.zeros((batch, num_anchors, 4), dtype=np.float64)
    next_positive = np.zeros((batch, num_anchors), dtype=bool)
    active = np.zeros(batch, dtype=bool)
    for row, (frame, next_frame, t_k) in enumerate(zip(labels, next_labels, step_times)):
        if frame is None or t_k < cfg.warmup_us:
            continue
        active[row] = True
        match = match_anchors(frame, anchors_cxcywh, cfg.match_iou)
        positive[row] = match.positive
        class_targets[row, match.positive] = match.labels[match.positive]
        deltas[row] = match.deltas
        if next_frame is None or not match.positive.any():
            continue
        by_track = {box.track_id: box for box in next_frame.boxes if box.track_id >= 0}
        for anchor in np.flatnonzero(match.positive):
            track_id = frame.boxes[match.matched_gt[anchor]].track_id
            future = by_track.get(track_id) if track_id >= 0 else None
            if future is None:
                continue
            next_deltas[row, anchor] = encode_boxes(np.asarray([future.xywh]), anchors_cxcywh[anchor:anchor + 1])[0]
            next_positive[row, anchor] = True
    return StepTargets(class_targets, deltas, positive, next_deltas, next_positive, active)


def window_loss(model: DetectorModel, inputs: list[np.ndarray], targets: list[StepTargets],
                state: RecurrentState | None, cfg: TrainConfig):
    """Forward a truncation window; returns (mean loss or None, per-step bundles, final state).

    The previous second-head prediction is not carried across window starts.
    """
    if len(inputs) != len(targets):
        raise ArgumentError('One target set per input step is required.')
    bundles: list[LossBundle] = []
    totals = []
    previous_next = None
    for x, step_targets in zip(inputs, targets):
        output, state = model.step(x, state)
        bundle = detection_loss(output.cls_logits, output.box_now, output.box_next, step_targets,
                                previous_next, cfg.gamma, cfg.beta, cfg.use_consistency)
        bundles.append(bundle)
        if step_targets.active.any():
            totals.append(bundle.total)
        previous_next = output.box_next
    if not totals:
        return None, bundles, state
    loss = totals[0]
    for term in totals[1:]:
        loss = loss + term
    return loss * (1.0 / len(totals)), bundles, state


class Trainer:

    def __init__(self, model: DetectorModel, cfg: TrainConfig, repr_cfg: ReprConfig, out_dir: str | Path,
                 eval_cfg: EvalConfig | None = None):
        self.model = model
        self.cfg = cfg
        self.repr_cfg = repr_cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.eval_cfg = eval_cfg or EvalConfig(
            tolerance_us=cfg.label_tolerance_us, warmup_us=cfg.warmup_us, min_diag=cfg.min_diag,
            min_side=cfg.min_side,
        )
        self.optimizer = Adam(model.parameters(), cfg.lr, cfg.betas, cfg.adam_eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.state = TrainState(rng_state=self.rng.bit_generator.state)
        self.metrics_path = self.out_dir / METRICS_FILE

    # checkpoints

    def checkpoint_prefix(self, kind: str) -> Path:
        return self.out_dir / f'checkpoint_{kind}'

    def save(self, kind: str) -> Path:
        self.state.adam_step = self.optimizer.step_count
        tensors = dict(self.model.state_dict())
        tensors.update(self.optimizer.state_dict())
        meta = {
            'kind': kind,
            'train_state': self.state.as_dict(),
            'network': self.model.cfg.model_dump(mode='json'),
            'repr': self.repr_cfg.model_dump(mode='json'),
            'train': self.cfg.model_dump(mode='json'),
        }
        save_checkpoint(self.checkpoint_prefix(kind), tensors, meta)
        return self.checkpoint_prefix(kind)

    def resume(self, prefix: str | Path):
        tensors, meta = load_checkpoint(prefix)
        model_tensors = {k: v for k, v in tensors.items() if not k.startswith('adam.')}
        self.model.load_state_dict(model_tensors)
        self.state = TrainState.from_dict(meta.get('train_state', {}))
        self.optimizer.load_state_dict(tensors, self.state.adam_step)
        if self.state.rng_state is not None:
            self.rng.bit_generator.state = self.state.rng_state
        logger.info('Resumed from %s at epoch %d, step %d', prefix, self.state.epoch, self.state.global_step)

    # logging

    def _log_metrics(self, record: dict):
        append_jsonl(record, self.metrics_path)

    # data

    def _window_inputs(self, batch: list[PreparedSequence], start: int, stop: int) -> list[np.ndarray]:
        """Stacked representations per step; rows whose sequence has ended get zeros."""
        inputs = []
        for k in range(start, stop):
            rows = [build_representation(seq.slices[k], self.repr_cfg).values if k < len(seq) else None
                    for seq in batch]
            blank = np.zeros_like(next(row for row in rows if row is not None))
            inputs.append(np.stack([blank if row is None else row for row in rows]))
        return inputs

    def _window_targets(self, batch: list[PreparedSequence], start: int, stop: int, anchors: np.ndarray):
        targets = []
        for k in range(start, stop):
            labels = [seq.labels[k] if k < len(seq) else None for seq in batch]
            next_labels = [seq.labels[k + 1] if k + 1 < len(seq) else None for seq in batch]
            step_times = [seq.slices[min(k, len(seq) - 1)].t_end for seq in batch]
            targets.append(build_step_targets(labels, next_labels, step_times, anchors, self.model.cfg.num_classes,
                                              self.cfg))
        return targets

    # loop

    def _diverged(self, message: str):
        path = self.save('diverged')
        logger.error('Training diverged at step %d: %s (checkpoint %s)', self.state.global_step, message, path)
        raise TrainingError(f'{message} at step {self.state.global_step}; checkpoint saved to {path}.')

    def _run_batch(self, batch: list[PreparedSequence], anchors: np.ndarray, lr: float,
                   executor: ThreadPoolExecutor) -> list[dict]:
        steps = max(len(seq) for seq in batch)
        windows = [(start, min(start + self.cfg.tbptt_steps, steps)) for start in range(0, steps, self.cfg.tbptt_steps)]
        records = []
        state = None
        pending = executor.submit(self._window_inputs, batch, *windows[0]) if windows else None
        for index, (start, stop) in enumerate(windows):
            inputs = pending.result()
            if index + 1 < len(windows):
                pending = executor.submit(self._window_inputs, batch, *windows[index + 1])
            targets = self._window_targets(batch, start, stop, anchors)
            self.model.train()
            loss, bundles, state = window_loss(self.model, inputs, targets, state, self.cfg)
            state = state.detach()
            if loss is None:
                continue
            if not math.isfinite(loss.item()):
                self._diverged('Loss is not finite')
            self.optimizer.zero_grad()
            loss.backward()
            try:
                self.optimizer.step(lr)
            except TrainingError as exc:
                self._diverged(str(exc))
            self.state.global_step += 1
            active = [b.as_dict() for b, t in zip(bundles, targets) if t.active.any()]
            record = {key: float(np.mean([item[key] for item in active])) for key in active[0]}
            record.update({'epoch': self.state.epoch, 'step': self.state.global_step, 'lr': lr})
            self._log_metrics(record)
            records.append(record)
        return records

    def validate(self, sequences: list[TrainingSequence]) -> float:
        inference_cfg = InferenceConfig(delta_t_us=self.cfg.delta_t_us, score_thresh=self.cfg.val_score_thresh,
                                        prefetch=False)
        items = []
        for sequence in sequences:
            session = DetectorSession(self.model, self.repr_cfg, sequence.stream.width, sequence.stream.height,
                                      inference_cfg)
            t_end = sequence.frames[-1].t if sequence.frames else None
            dets = session.run_stream(sequence.stream, t_end)
            items.append((dets, sequence.frames, [frame.t for frame in dets]))
        self.model.train()
        return evaluate_sequences(items, self.eval_cfg).map

    def fit(self, dataset: list[TrainingSequence], validation: list[TrainingSequence] | None = None) -> TrainResult:
        if not dataset:
            raise TrainingError('Training dataset is empty.')
        prepared = [prepare_sequence(sequence, self.cfg) for sequence in dataset]
        prepared = [seq for seq in prepared if len(seq)]
        if not prepared:
            raise TrainingError('Training sequences contain no time steps.')
        dims = {(seq.slices[0].width, seq.slices[0].height) for seq in prepared}
        if len(dims) != 1:
            raise TrainingError(f'Training sequences mix sensor sizes {sorted(dims)}.')
        width, height = dims.pop()
        anchors = self.model.anchors(width, height).boxes
        result = TrainResult(self.state)
        logger.info('Training on %d sequences for %d epochs (resuming at %d)', len(prepared), self.cfg.epochs,
                    self.state.epoch)
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
            while self.state.epoch < self.cfg.epochs:
                lr = self.cfg.lr_at(self.state.epoch)
                order = self.rng.permutation(len(prepared))
                records = []
                for start in range(0, len(order), self.cfg.batch_size):
                    batch = [prepared[i] for i in order[start:start + self.cfg.batch_size]]
                    records.extend(self._run_batch(batch, anchors, lr, executor))
                train_loss = float(np.mean([r['loss'] for r in records])) if records else float('nan')
                summary = {'epoch': self.state.epoch, 'lr': lr, 'train_loss': train_loss}
                if validation:
                    summary['val_map'] = self.validate(validation)
                    metric = summary['val_map']
                else:
                    metric = -train_loss if records else None
                self.state.epoch += 1
                self.state.rng_state = self.rng.bit_generator.state
                if metric is not None and (self.state.best_metric is None or metric > self.state.best_metric):
                    self.state.best_metric = metric
                    result.best_checkpoint = self.save('best')
                result.last_checkpoint = self.save('last')
                self._log_metrics({'event': 'epoch_end', **summary})
                result.history.append(summary)
                logger.info('Epoch %d done: %s', summary['epoch'], summary)
        result.state = self.state
        return result


def train(model: DetectorModel, dataset: list[TrainingSequence], cfg: TrainConfig, repr_cfg: ReprConfig,
          out_dir: str | Path, validation: list[TrainingSequence] | None = None,
          resume_from: str | Path | None = None) -> TrainResult:
    trainer = Trainer(model, cfg, repr_cfg, out_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.fit(dataset, validation)


def load_detector(checkpoint: str | Path, **network_overrides) -> tuple[DetectorModel, ReprConfig]:
    """Rebuild a trained detector and the representation it was trained on from a checkpoint."""
    prefix = resolve_checkpoint_prefix(checkpoint)
    tensors, meta = load_checkpoint(prefix)
    try:
        network = NetworkConfig(**{**meta['network'], **network_overrides})
        repr_cfg = ReprConfig(**meta['repr'])
    except (KeyError, TypeError, ValidationError) as exc:
        raise ConfigError(f'Checkpoint {prefix} lacks usable network/repr metadata: {exc}') from exc
    model = build_model(network)
    model.load_state_dict({name: value for name, value in tensors.items() if not name.startswith('adam.')})
    return model.eval(), repr_cfg
