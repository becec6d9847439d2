"""Command reports (JSON), JSON-lines logs and plot-ready CSV curves."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

REPORT_FILE = 'report.json'


def write_json(payload: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding='utf-8')
    return path


def write_report(payload: dict, out_dir: str | Path) -> Path:
    return write_json(payload, Path(out_dir) / REPORT_FILE)


def append_jsonl(record: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'a', encoding='utf-8') as handle:
        handle.write(json.dumps(record, default=str) + '\n')
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]


def write_curve_csv(curve: np.ndarray, path: str | Path, value_column: str = 'mean_iou') -> Path:
    """One row per bin: bin index, bin centre in normalised track time, value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curve = np.asarray(curve, dtype=np.float64)
    bins = curve.shape[0]
    frame = pd.DataFrame({
        'bin': np.arange(bins),
        'track_time': (np.arange(bins) + 0.5) / bins if bins else np.zeros(0),
        value_column: curve,
    })
    frame.to_csv(path, index=False)
    return path


def write_table_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path
