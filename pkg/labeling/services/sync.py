"""Clock offset between an event camera and a frame camera by zero-normalized cross-correlation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from event_detection.exceptions import SyncError
from event_detection.services.events_core import EventStream
from labeling.services.signals import SIGNAL_PAIRS, ActivitySignal, activity_signals, frame_difference_signals

logger = logging.getLogger(__name__)

DEFAULT_MAX_LAG_US = 10_000_000
MIN_OVERLAP = 2


@dataclass
class SyncResult:
    """offset_us is added to frame-clock timestamps to obtain event-clock timestamps."""

    offset_us: int
    lags: dict[str, int] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    method: str = 'median'

    def as_dict(self) -> dict:
        return {'offset_us': self.offset_us, 'lags': self.lags, 'scores': self.scores, 'method': self.method}


def _overlap(event_values: np.ndarray, frame_values: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Segments aligned so that event[j] is compared with frame[j - lag]."""
    if lag >= 0:
        n = min(event_values.shape[0] - lag, frame_values.shape[0])
        return event_values[lag:lag + n], frame_values[:n]
    n = min(event_values.shape[0], frame_values.shape[0] + lag)
    return event_values[:n], frame_values[-lag:-lag + n]


def zncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-normalized cross-correlation of equal-length segments; nan when either is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[0] < MIN_OVERLAP:
        return float('nan')
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom <= 1e-12 * max(a.shape[0], 1):
        return float('nan')
    return float((a * b).sum() / denom)


def zncc_curve(event_values: np.ndarray, frame_values: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    lags = np.arange(-max_lag, max_lag + 1)
    scores = np.array([zncc(*_overlap(event_values, frame_values, int(lag))) for lag in lags])
    return lags, scores


def best_lag(event_values: np.ndarray, frame_values: np.ndarray, max_lag: int) -> tuple[int, float] | None:
    """Lag maximising ZNCC; ties go to the lag of smallest magnitude."""
    lags, scores = zncc_curve(event_values, frame_values, max_lag)
    if not np.isfinite(scores).any():
        return None
    best = np.nanmax(scores)
    candidates = lags[np.isclose(scores, best, rtol=0.0, atol=1e-12)]
    lag = int(candidates[np.argmin(np.abs(candidates))])
    return lag, float(best)


def zncc_sync(event_signals: list[ActivitySignal], frame_signals: list[ActivitySignal],
              max_lag_us: int = DEFAULT_MAX_LAG_US) -> SyncResult:
    """Median over signal pairs of the ZNCC-maximising lag, in microseconds."""
    by_kind = {signal.kind: signal for signal in frame_signals}
    lags, scores = {}, {}
    period = None
    for event_signal in event_signals:
        frame_signal = by_kind.get(SIGNAL_PAIRS.get(event_signal.kind, ''))
        if frame_signal is None:
            continue
        if event_signal.rate_hz != frame_signal.rate_hz:
            raise SyncError(f'{event_signal.kind} and {frame_signal.kind} are sampled at different rates.')
        period = event_signal.period_us
        shortest = min(len(event_signal), len(frame_signal))
        max_lag = int(max_lag_us // period)
        if 2 * max_lag > shortest:
            max_lag = max(shortest // 2, 0)
            logger.warning('Clamped ZNCC search to +/-%d slices for %s (signals of %d slices)', max_lag,
                           event_signal.kind, shortest)
        if np.std(event_signal.values) == 0 or np.std(frame_signal.values) == 0:
            logger.warning('Excluding %s/%s from synchronisation: zero variance', event_signal.kind,
                           frame_signal.kind)
            continue
        found = best_lag(event_signal.values, frame_signal.values, max_lag)
        if found is None:
            logger.warning('Excluding %s/%s from synchronisation: no valid overlap', event_signal.kind,
                           frame_signal.kind)
            continue
        lags[event_signal.kind], scores[event_signal.kind] = found
    if not lags:
        raise SyncError('No signal pair could be correlated.')
    offset = int(round(float(np.median(list(lags.values()))) * period))
    logger.info('Estimated clock offset %d us from %d signal pairs', offset, len(lags))
    return SyncResult(offset, lags, scores)


def sync_stream_to_frames(stream: EventStream, frames: list[tuple[int, np.ndarray]], rate_hz: int,
                          max_lag_us: int = DEFAULT_MAX_LAG_US) -> SyncResult:
    if len(frames) < 3:
        raise SyncError(f'Need at least 3 frames to form difference signals, got {len(frames)}.')
    return zncc_sync(activity_signals(stream, rate_hz), frame_difference_signals(frames, rate_hz), max_lag_us)
