"""Homography JSON: {"matrix": [[...], [...], [...]], ...} or a bare 3x3 list."""

from __future__ import annotations

import json
from pathlib import Path

from event_detection.exceptions import ArgumentError, DecodeError
from event_detection.services.boxes import check_homography
from labeling.services.homography import HomographyResult


def read_homography(path: str | Path) -> HomographyResult:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'Homography file {path} does not exist.')
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise DecodeError(f'Invalid homography JSON in {path}: {exc.msg}', offset=exc.pos) from exc
    matrix = data.get('matrix') if isinstance(data, dict) else data
    try:
        return HomographyResult.from_matrix(check_homography(matrix))
    except (ArgumentError, TypeError, ValueError) as exc:
        raise DecodeError(f'{path} does not hold an invertible 3x3 matrix: {exc}') from exc


def write_homography(result: HomographyResult, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.as_dict(), indent=2), encoding='utf-8')
    return path
