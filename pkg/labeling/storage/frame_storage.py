"""Grayscale frames as binary PGM (P5) files named <timestamp_us>.pgm."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from event_detection.exceptions import DecodeError

logger = logging.getLogger(__name__)


def write_pgm(image: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format='PPM')
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.format != 'PPM' or image.mode != 'L':
                raise DecodeError(f'{path} is not an 8-bit grayscale PGM file')
            return np.asarray(image, dtype=np.uint8).copy()
    except UnidentifiedImageError as exc:
        raise DecodeError(f'{path} is not a readable PGM file', offset=0) from exc


def write_frames(frames: list[tuple[int, np.ndarray]], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return [write_pgm(image, directory / f'{int(t)}.pgm') for t, image in frames]


def read_frames(directory: str | Path) -> list[tuple[int, np.ndarray]]:
    """All <timestamp_us>.pgm files of a directory, sorted by timestamp."""
    frames = []
    for path in Path(directory).glob('*.pgm'):
        try:
            t = int(path.stem)
        except ValueError:
            logger.warning('Skipping %s: file name is not a timestamp', path)
            continue
        frames.append((t, read_pgm(path)))
    frames.sort(key=lambda item: item[0])
    return frames
