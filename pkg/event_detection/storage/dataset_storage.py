"""Dataset directories: <name>.evt + <name>.boxes.jsonl pairs, with optional <name>.meta.json."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from event_detection.services.evaluation import StopInterval
from event_detection.services.synthgen import SyntheticScene
from event_detection.services.training import TrainingSequence
from event_detection.storage.box_storage import read_box_frames, write_box_frames
from event_detection.storage.event_storage import read_stream, write_stream

logger = logging.getLogger(__name__)

EVENTS_SUFFIX = '.evt'
BOXES_SUFFIX = '.boxes.jsonl'
META_SUFFIX = '.meta.json'


def sequence_paths(directory: str | Path, name: str) -> tuple[Path, Path, Path]:
    directory = Path(directory)
    return directory / f'{name}{EVENTS_SUFFIX}', directory / f'{name}{BOXES_SUFFIX}', directory / f'{name}{META_SUFFIX}'


def write_scene(scene: SyntheticScene, directory: str | Path, name: str) -> tuple[Path, Path, Path]:
    events_path, boxes_path, meta_path = sequence_paths(directory, name)
    write_stream(scene.stream, events_path)
    write_box_frames(scene.frames, boxes_path)
    meta_path.write_text(json.dumps(scene.metadata(), indent=2), encoding='utf-8')
    return events_path, boxes_path, meta_path


def list_sequences(directory: str | Path) -> list[str]:
    """Names having both an event file and a label file, sorted."""
    directory = Path(directory)
    names = []
    for events_path in sorted(directory.glob(f'*{EVENTS_SUFFIX}')):
        name = events_path.name[:-len(EVENTS_SUFFIX)]
        if (directory / f'{name}{BOXES_SUFFIX}').exists():
            names.append(name)
        else:
            logger.warning('Skipping %s: no %s labels next to it', events_path, BOXES_SUFFIX)
    return names


def read_sequence(directory: str | Path, name: str) -> TrainingSequence:
    events_path, boxes_path, _ = sequence_paths(directory, name)
    return TrainingSequence(name, read_stream(events_path), read_box_frames(boxes_path))


def read_dataset(directory: str | Path) -> list[TrainingSequence]:
    return [read_sequence(directory, name) for name in list_sequences(directory)]


def read_stops(directory: str | Path, name: str) -> list[StopInterval]:
    _, _, meta_path = sequence_paths(directory, name)
    if not meta_path.exists():
        return []
    meta = json.loads(meta_path.read_text(encoding='utf-8'))
    return [StopInterval(int(s['track_id']), int(s['t_start']), int(s['t_end'])) for s in meta.get('stops', [])]
