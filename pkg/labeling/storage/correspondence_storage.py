"""Point correspondences as CSV with columns x_src, y_src, x_dst, y_dst."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from event_detection.exceptions import DecodeError

COLUMNS = ['x_src', 'y_src', 'x_dst', 'y_dst']


def read_correspondences(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DecodeError(f'Cannot parse correspondences in {path}: {exc}') from exc
    missing = [column for column in COLUMNS if column not in frame.columns]
    if missing:
        raise DecodeError(f'{path} lacks columns {missing}')
    values = frame[COLUMNS].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DecodeError(f'{path} contains non-numeric or missing coordinates')
    return values[:, :2], values[:, 2:]


def write_correspondences(src: np.ndarray, dst: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.hstack([np.asarray(src, dtype=np.float64).reshape(-1, 2), np.asarray(dst, dtype=np.float64).reshape(-1, 2)])
    pd.DataFrame(values, columns=COLUMNS).to_csv(path, index=False)
    return path
