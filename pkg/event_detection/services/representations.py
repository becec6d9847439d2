"""Dense per-slice input tensors: clamped histograms, time surfaces and event volumes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from event_detection.exceptions import ArgumentError
from event_detection.services.events_core import TimeSlice

logger = logging.getLogger(__name__)

ReprKind = Literal['histogram', 'time_surface', 'event_volume']


class ReprConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: ReprKind = 'event_volume'
    m: int = Field(default=20, ge=1, description='histogram clamp count')
    taus: tuple[float, ...] = Field(default=(10_000.0, 100_000.0), min_length=1,
                                    description='time-surface decays in microseconds')
    bins: int = Field(default=5, ge=2, description='event-volume temporal bins')

    @field_validator('taus')
    @classmethod
    def taus_positive(cls, value):
        if any(tau <= 0 for tau in value):
            raise ValueError('every tau must be > 0')
        return value


@dataclass(frozen=True)
class ReprTensor:
    values: np.ndarray
    t_start: int
    t_end: int
    kind: str

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)


def channel_count(cfg: ReprConfig) -> int:
    if cfg.kind == 'histogram':
        return 2
    if cfg.kind == 'time_surface':
        return 2 * len(cfg.taus)
    return 2 * cfg.bins


def _flat_pixels(events: np.ndarray, width: int) -> np.ndarray:
    return events['y'].astype(np.int64) * width + events['x'].astype(np.int64)


def _require_kind(cfg: ReprConfig, kind: str):
    if cfg.kind != kind:
        raise ArgumentError(f'Config kind is {cfg.kind!r}, builder expects {kind!r}.')


def build_histogram(time_slice: TimeSlice, cfg: ReprConfig) -> ReprTensor:
    """Channel p holds min(1, count(p, x, y) / m)."""
    _require_kind(cfg, 'histogram')
    width, height = time_slice.width, time_slice.height
    events = time_slice.events
    index = events['p'].astype(np.int64) * (width * height) + _flat_pixels(events, width)
    counts = np.bincount(index, minlength=2 * width * height).astype(np.float32)
    values = np.minimum(counts / np.float32(cfg.m), np.float32(1.0)).reshape(2, height, width)
    return ReprTensor(values, time_slice.t_start, time_slice.t_end, 'histogram')


def latest_timestamps(time_slice: TimeSlice) -> np.ndarray:
    """(2, N, M) int64 map of the latest event time per polarity and pixel, -1 where none fired."""
    width, height = time_slice.width, time_slice.height
    events = time_slice.events
    latest = np.full(2 * width * height, -1, dtype=np.int64)
    index = events['p'].astype(np.int64) * (width * height) + _flat_pixels(events, width)
    np.maximum.at(latest, index, events['t'].astype(np.int64))
    return latest.reshape(2, height, width)


def build_time_surface(time_slice: TimeSlice, cfg: ReprConfig) -> ReprTensor:
    """exp((ts - max ts) / tau) per polarity and decay; channel = polarity * len(taus) + decay."""
    _require_kind(cfg, 'time_surface')
    latest = latest_timestamps(time_slice)
    taus = len(cfg.taus)
    values = np.zeros((2 * taus, time_slice.height, time_slice.width), dtype=np.float32)
    for p in (0, 1):
        fired = latest[p] >= 0
        if not fired.any():
            continue
        newest = latest[p][fired].max()
        age = (latest[p] - newest).astype(np.float64)
        for j, tau in enumerate(cfg.taus):
            values[p * taus + j] = np.where(fired, np.exp(age / tau), 0.0)
    return ReprTensor(values, time_slice.t_start, time_slice.t_end, 'time_surface')


def build_event_volume(time_slice: TimeSlice, cfg: ReprConfig) -> ReprTensor:
    """Bilinear temporal binning, channel = bin * 2 + polarity.

    Timestamps are normalised over [t_first, t_last] of the slice; a slice whose
    events share one timestamp deposits everything in bin 0.
    """
    _require_kind(cfg, 'event_volume')
    width, height, bins = time_slice.width, time_slice.height, cfg.bins
    plane = width * height
    events = time_slice.events
    total = np.zeros(2 * bins * plane, dtype=np.float64)
    if events.shape[0]:
        t = events['t'].astype(np.int64)
        t_first, t_last = int(t[0]), int(t[-1])
        span = t_last - t_first
        if span > 0:
            t_star = (bins - 1) * (t - t_first).astype(np.float64) / span
        else:
            t_star = np.zeros(t.shape[0], dtype=np.float64)
        lower = np.floor(t_star).astype(np.int64)
        frac = t_star - lower
        pixel = events['p'].astype(np.int64) * plane + _flat_pixels(events, width)
        for b, weight in ((lower, 1.0 - frac), (lower + 1, frac)):
            valid = (b >= 0) & (b < bins) & (weight > 0)
            index = b[valid] * (2 * plane) + pixel[valid]
            total += np.bincount(index, weights=weight[valid], minlength=total.shape[0])
    values = total.astype(np.float32).reshape(2 * bins, height, width)
    return ReprTensor(values, time_slice.t_start, time_slice.t_end, 'event_volume')


BUILDERS = {
    'histogram': build_histogram,
    'time_surface': build_time_surface,
    'event_volume': build_event_volume,
}


def build_representation(time_slice: TimeSlice, cfg: ReprConfig) -> ReprTensor:
    return BUILDERS[cfg.kind](time_slice, cfg)


def downsample_2x2(values: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the last two axes; odd edges average over the valid pixels."""
    values = np.asarray(values, dtype=np.float32)
    height, width = values.shape[-2:]
    pad_h, pad_w = height % 2, width % 2
    if pad_h or pad_w:
        pad = [(0, 0)] * (values.ndim - 2) + [(0, pad_h), (0, pad_w)]
        counts = np.pad(np.ones((height, width), dtype=np.float32), [(0, pad_h), (0, pad_w)])
        values = np.pad(values, pad)
    else:
        counts = np.ones((height, width), dtype=np.float32)
    out_h, out_w = values.shape[-2] // 2, values.shape[-1] // 2
    summed = values.reshape(*values.shape[:-2], out_h, 2, out_w, 2).sum(axis=(-3, -1))
    denom = counts.reshape(out_h, 2, out_w, 2).sum(axis=(1, 3))
    return summed / denom
