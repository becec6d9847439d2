"""Binary ".evt" event files.

Layout (little-endian): 16-byte header = b"EVT1", u16 width, u16 height,
u64 event count; then 16 bytes per event = u64 t, u16 x, u16 y, u8 p and
five zero pad bytes.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np

from event_detection.exceptions import DecodeError
from event_detection.services.events_core import EVENT_DTYPE, EventStream, first_invalid_event

logger = logging.getLogger(__name__)

MAGIC = b'EVT1'
HEADER_DTYPE = np.dtype([('magic', 'S4'), ('width', '<u2'), ('height', '<u2'), ('count', '<u8')])
RECORD_DTYPE = np.dtype({
    'names': ['t', 'x', 'y', 'p', 'pad'],
    'formats': ['<u8', '<u2', '<u2', 'u1', 'V5'],
    'offsets': [0, 8, 10, 12, 13],
    'itemsize': 16,
})
HEADER_SIZE = HEADER_DTYPE.itemsize
RECORD_SIZE = RECORD_DTYPE.itemsize
DEFAULT_CHUNK_EVENTS = 1 << 20


def _parse_header(raw: bytes) -> tuple[int, int, int]:
    if len(raw) < HEADER_SIZE:
        raise DecodeError('Truncated header', offset=len(raw))
    header = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if bytes(header['magic']) != MAGIC:
        raise DecodeError(f'Bad magic {bytes(header["magic"])!r}', offset=0)
    width, height, count = int(header['width']), int(header['height']), int(header['count'])
    if width == 0 or height == 0:
        raise DecodeError('Sensor dimensions must be positive', offset=4)
    return width, height, count


def _records_to_events(records: np.ndarray, width: int, height: int, first_index: int,
                       last_t: int | None) -> np.ndarray:
    pads = records['pad'].view(np.uint8).reshape(-1, 5) if records.shape[0] else np.empty((0, 5))
    nonzero_pad = np.flatnonzero(pads.any(axis=1))
    events = np.empty(records.shape[0], dtype=EVENT_DTYPE)
    for name in ('t', 'x', 'y', 'p'):
        events[name] = records[name]
    invalid = first_invalid_event(events, width, height)
    candidates = []
    if invalid is not None:
        candidates.append((invalid[0], invalid[1]))
    if nonzero_pad.size:
        candidates.append((int(nonzero_pad[0]), 'non-zero pad bytes'))
    if last_t is not None and events.shape[0] and int(events['t'][0]) < last_t:
        candidates.append((0, 'non-monotone timestamp'))
    if candidates:
        index, reason = min(candidates)
        offset = HEADER_SIZE + (first_index + index) * RECORD_SIZE
        raise DecodeError(f'Event {first_index + index}: {reason}', offset=offset)
    return events


def read_stream(path: str | Path) -> EventStream:
    """Read a whole ".evt" file into an EventStream."""
    raw = Path(path).read_bytes()
    width, height, count = _parse_header(raw)
    expected = HEADER_SIZE + count * RECORD_SIZE
    if len(raw) != expected:
        raise DecodeError(
            f'File holds {len(raw)} bytes but header announces {count} events ({expected} bytes)',
            offset=min(len(raw), expected),
        )
    records = np.frombuffer(raw, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    events = _records_to_events(records, width, height, 0, None)
    return EventStream(width, height, events)


def read_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, 'rb') as handle:
        return _parse_header(handle.read(HEADER_SIZE))


def iter_chunks(path: str | Path, chunk_events: int = DEFAULT_CHUNK_EVENTS) -> Iterator[np.ndarray]:
    """Yield validated event arrays of at most chunk_events events, sequentially."""
    with open(path, 'rb') as handle:
        width, height, count = _parse_header(handle.read(HEADER_SIZE))
        index = 0
        last_t = None
        while index < count:
            n = min(chunk_events, count - index)
            raw = handle.read(n * RECORD_SIZE)
            if len(raw) != n * RECORD_SIZE:
                raise DecodeError('Truncated event payload', offset=HEADER_SIZE + index * RECORD_SIZE + len(raw))
            records = np.frombuffer(raw, dtype=RECORD_DTYPE)
            events = _records_to_events(records, width, height, index, last_t)
            last_t = int(events['t'][-1])
            index += n
            yield events
        if handle.read(1):
            raise DecodeError('Trailing bytes after last event', offset=HEADER_SIZE + count * RECORD_SIZE)


def write_stream(stream: EventStream, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header['magic'] = MAGIC
    header['width'] = stream.width
    header['height'] = stream.height
    header['count'] = len(stream)
    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    for name in ('t', 'x', 'y', 'p'):
        records[name] = stream.events[name]
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(records.tobytes())
    logger.debug('Wrote %d events to %s', len(stream), path)
    return path
