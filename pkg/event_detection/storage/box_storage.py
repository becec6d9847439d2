""".boxes.jsonl label files: one JSON object per box."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from pathlib import Path

from event_detection.exceptions import DecodeError
from event_detection.services.boxes import Box, BoxFrame, group_frames

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ('t', 'x', 'y', 'w', 'h', 'class_id')


def _box_from_record(record: dict, line_number: int, offset: int) -> Box:
    missing = [name for name in REQUIRED_FIELDS if name not in record]
    if missing:
        raise DecodeError(f'Line {line_number}: missing fields {missing}', offset=offset)
    try:
        return Box(
            x=float(record['x']),
            y=float(record['y']),
            w=float(record['w']),
            h=float(record['h']),
            class_id=int(record['class_id']),
            t=int(record['t']),
            track_id=int(record.get('track_id', -1)),
            confidence=float(record.get('confidence', 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise DecodeError(f'Line {line_number}: {exc}', offset=offset) from exc


def read_boxes(path: str | Path) -> list[Box]:
    boxes = []
    offset = 0
    with open(path, 'rb') as handle:
        for line_number, raw in enumerate(handle, start=1):
            text = raw.strip()
            if text:
                try:
                    record = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise DecodeError(f'Line {line_number}: invalid JSON ({exc.msg})', offset=offset) from exc
                boxes.append(_box_from_record(record, line_number, offset))
            offset += len(raw)
    return boxes


def read_box_frames(path: str | Path) -> list[BoxFrame]:
    """Read a label file and group it into timestamp-ordered frames."""
    return group_frames(read_boxes(path))


def box_to_record(box: Box) -> dict:
    return {
        't': int(box.t),
        'x': float(box.x),
        'y': float(box.y),
        'w': float(box.w),
        'h': float(box.h),
        'class_id': int(box.class_id),
        'track_id': int(box.track_id),
        'confidence': float(box.confidence),
    }


def write_boxes(boxes: Iterable[Box], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as handle:
        for box in boxes:
            handle.write(json.dumps(box_to_record(box)) + '\n')
            count += 1
    logger.debug('Wrote %d boxes to %s', count, path)
    return path


def write_box_frames(frames: Iterable[BoxFrame], path: str | Path) -> Path:
    return write_boxes((box for frame in frames for box in frame.boxes), path)
