"""Event data model and slicing of event streams into time or count windows."""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from event_detection.exceptions import ArgumentError

EVENT_DTYPE = np.dtype([('t', '<u8'), ('x', '<u2'), ('y', '<u2'), ('p', 'u1')])

US_PER_SECOND = 1_000_000


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


def make_events(xs, ys, ps, ts) -> np.ndarray:
    """Pack parallel coordinate arrays into the structured event dtype."""
    ts = np.asarray(ts)
    events = np.empty(ts.shape[0], dtype=EVENT_DTYPE)
    events['t'] = ts
    events['x'] = np.asarray(xs)
    events['y'] = np.asarray(ys)
    events['p'] = np.asarray(ps)
    return events


def first_invalid_event(events: np.ndarray, width: int, height: int) -> tuple[int, str] | None:
    """Return (index, reason) of the first event breaking the stream invariants."""
    if events.shape[0] == 0:
        return None
    bad_bounds = (events['x'] >= width) | (events['y'] >= height) | (events['p'] > 1)
    bad_order = np.zeros(events.shape[0], dtype=bool)
    bad_order[1:] = events['t'][1:] < events['t'][:-1]
    bad = np.flatnonzero(bad_bounds | bad_order)
    if bad.size == 0:
        return None
    index = int(bad[0])
    if bad_order[index]:
        return index, 'non-monotone timestamp'
    return index, 'coordinate or polarity out of bounds'


@dataclass(frozen=True)
class EventStream:
    width: int
    height: int
    events: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ArgumentError(f'Sensor dimensions must be positive, got {self.width}x{self.height}.')
        events = np.asarray(self.events, dtype=EVENT_DTYPE)
        invalid = first_invalid_event(events, self.width, self.height)
        if invalid is not None:
            index, reason = invalid
            raise ArgumentError(f'Event {index}: {reason}.')
        events = events.view()
        events.flags.writeable = False
        object.__setattr__(self, 'events', events)

    def __len__(self) -> int:
        return int(self.events.shape[0])

    def __iter__(self) -> Iterator[Event]:
        for row in self.events:
            yield Event(int(row['x']), int(row['y']), int(row['p']), int(row['t']))

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    @property
    def t_end(self) -> int:
        return int(self.events['t'][-1]) if len(self) else 0

    @classmethod
    def empty(cls, width: int, height: int) -> 'EventStream':
        return cls(width, height, np.empty(0, dtype=EVENT_DTYPE))

    @classmethod
    def from_unsorted(cls, width: int, height: int, events: np.ndarray) -> 'EventStream':
        order = np.argsort(events['t'], kind='stable')
        return cls(width, height, events[order])


@dataclass(frozen=True)
class TimeSlice:
    t_start: int
    t_end: int
    events: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise ArgumentError(f'Empty slice interval [{self.t_start}, {self.t_end}).')

    def __len__(self) -> int:
        return int(self.events.shape[0])


def _check_delta(delta_t: int) -> int:
    if delta_t is None or int(delta_t) <= 0:
        raise ArgumentError(f'delta_t must be a positive number of microseconds, got {delta_t}.')
    return int(delta_t)


def iter_slices_by_time(
    chunks: Iterable[np.ndarray],
    delta_t: int,
    width: int,
    height: int,
    t_end: int | None = None,
) -> Iterator[TimeSlice]:
    """Yield consecutive [k*dt, (k+1)*dt) slices from a chunked, time-ordered event source.

    Chunks are consumed lazily; at most one partial slice is buffered between chunks.
    Slices with no events between two populated slices are still emitted.
    When t_end is given, trailing empty slices are emitted until t_end is covered.
    """
    delta_t = _check_delta(delta_t)
    k = 0
    pending: list[np.ndarray] = []
    seen_any = False
    for chunk in chunks:
        if chunk.shape[0] == 0:
            continue
        seen_any = True
        slice_ids = (chunk['t'] // delta_t).astype(np.int64)
        while True:
            boundary = np.searchsorted(slice_ids, k + 1, side='left')
            pending.append(chunk[:boundary])
            if boundary == chunk.shape[0]:
                break
            yield TimeSlice(k * delta_t, (k + 1) * delta_t, np.concatenate(pending), width, height)
            pending = []
            chunk = chunk[boundary:]
            slice_ids = slice_ids[boundary:]
            k += 1
    if seen_any:
        yield TimeSlice(k * delta_t, (k + 1) * delta_t, np.concatenate(pending), width, height)
        k += 1
    if t_end is not None:
        empty = np.empty(0, dtype=EVENT_DTYPE)
        while k * delta_t <= t_end:
            yield TimeSlice(k * delta_t, (k + 1) * delta_t, empty, width, height)
            k += 1


def slice_by_time(stream: EventStream, delta_t: int, t_end: int | None = None) -> list[TimeSlice]:
    """Partition a stream into half-open windows [k*dt, (k+1)*dt) covering [0, T_end]."""
    delta_t = _check_delta(delta_t)
    if len(stream) == 0 and t_end is None:
        return []
    return list(iter_slices_by_time([stream.events], delta_t, stream.width, stream.height, t_end))


def slice_by_count(stream: EventStream, n: int) -> list[TimeSlice]:
    """Partition a stream into windows of exactly n events (the last may hold fewer).

    Window bounds are the timestamp of the first event and one past the
    timestamp of the last event in the window.
    """
    if n is None or int(n) < 1:
        raise ArgumentError(f'Event count per slice must be >= 1, got {n}.')
    n = int(n)
    slices = []
    for start in range(0, len(stream), n):
        events = stream.events[start:start + n]
        t_start = int(events['t'][0])
        t_end = int(events['t'][-1]) + 1
        slices.append(TimeSlice(t_start, t_end, events, stream.width, stream.height))
    return slices


def stream_stats(stream: EventStream) -> dict:
    """Summary statistics used by the stats command."""
    count = len(stream)
    if count == 0:
        return {
            'event_count': 0,
            'duration_us': 0,
            'event_rate_hz': 0.0,
            'on_fraction': 0.0,
            'active_pixel_fraction': 0.0,
            'width': stream.width,
            'height': stream.height,
        }
    t = stream.events['t']
    duration = int(t[-1] - t[0])
    flat = stream.events['y'].astype(np.int64) * stream.width + stream.events['x']
    active = np.unique(flat).size
    return {
        'event_count': count,
        'duration_us': duration,
        'event_rate_hz': round(count * US_PER_SECOND / max(duration, 1), 3),
        'on_fraction': round(float(stream.events['p'].mean()), 6),
        'active_pixel_fraction': round(active / (stream.width * stream.height), 6),
        'width': stream.width,
        'height': stream.height,
    }
