"""Per-slice activity signals from the event stream and from grayscale frame differences."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from event_detection.exceptions import ArgumentError
from event_detection.services.events_core import EventStream

logger = logging.getLogger(__name__)

SLICE_RATE_HZ = 60
SignalKind = Literal['event_sum', 'event_std', 'frame_diff_sum', 'frame_diff_std']

# event-side kind -> frame-side kind it is correlated with
SIGNAL_PAIRS = {'event_sum': 'frame_diff_sum', 'event_std': 'frame_diff_std'}


@dataclass(frozen=True)
class ActivitySignal:
    kind: SignalKind
    values: np.ndarray
    rate_hz: int = SLICE_RATE_HZ

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ArgumentError(f'{self.kind} signal contains non-finite values.')
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def period_us(self) -> float:
        return 1e6 / self.rate_hz


def activity_signals(stream: EventStream, rate_hz: int = SLICE_RATE_HZ,
                     length: int | None = None) -> list[ActivitySignal]:
    """Sum and standard deviation over pixels of the per-pixel event count in each 1/rate slice."""
    n_slices = length
    if n_slices is None:
        n_slices = int(stream.t_end * rate_hz // 1_000_000) + 1 if len(stream) else 0
    plane = stream.width * stream.height
    sums = np.zeros(n_slices)
    stds = np.zeros(n_slices)
    if len(stream) and n_slices:
        slice_ids = (stream.events['t'].astype(np.int64) * rate_hz) // 1_000_000
        pixels = stream.events['y'].astype(np.int64) * stream.width + stream.events['x']
        bounds = np.searchsorted(slice_ids, np.arange(n_slices + 1), side='left')
        for i in range(n_slices):
            counts = np.bincount(pixels[bounds[i]:bounds[i + 1]], minlength=plane).astype(np.float64)
            sums[i] = counts.sum()
            stds[i] = counts.std()
    return [ActivitySignal('event_sum', sums, rate_hz), ActivitySignal('event_std', stds, rate_hz)]


def frame_difference_signals(frames: list[tuple[int, np.ndarray]], rate_hz: int = SLICE_RATE_HZ,
                             length: int | None = None) -> list[ActivitySignal]:
    """Sum and standard deviation of |F_j - F_{j-1}|, placed at the slot of the earlier frame.

    Frames are (timestamp_us, grayscale image) pairs on a roughly 1/rate grid; a
    difference covers the motion between the two frames, hence the earlier slot.
    """
    frames = sorted(frames, key=lambda item: item[0])
    period = 1e6 / rate_hz
    slots = [int(np.floor(t / period + 0.5)) for t, _ in frames]
    n_slices = length if length is not None else (slots[-1] + 1 if frames else 0)
    sums = np.zeros(n_slices)
    stds = np.zeros(n_slices)
    for (_, previous), (_, current), slot in zip(frames, frames[1:], slots):
        if not 0 <= slot < n_slices:
            continue
        diff = np.abs(current.astype(np.float64) - previous.astype(np.float64))
        sums[slot] = diff.sum()
        stds[slot] = diff.std()
    return [ActivitySignal('frame_diff_sum', sums, rate_hz), ActivitySignal('frame_diff_std', stds, rate_hz)]
