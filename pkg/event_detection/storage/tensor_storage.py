"""Dense tensor dumps and named-tensor checkpoints.

".npyish": u32 C, u32 N, u32 M header followed by row-major little-endian f32.
Checkpoints: <prefix>.bin holds concatenated little-endian f32 tensors and
<prefix>.json is the manifest listing name, shape and byte offset of each.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from event_detection.exceptions import DecodeError

logger = logging.getLogger(__name__)

NPYISH_HEADER = np.dtype([('c', '<u4'), ('n', '<u4'), ('m', '<u4')])
F32 = np.dtype('<f4')


def write_npyish(values: np.ndarray, path: str | Path) -> Path:
    values = np.asarray(values, dtype=F32)
    if values.ndim != 3:
        raise ValueError(f'Expected a C x N x M tensor, got shape {values.shape}')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([values.shape], dtype=NPYISH_HEADER)
    with open(path, 'wb') as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(values).tobytes())
    return path


def read_npyish(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < NPYISH_HEADER.itemsize:
        raise DecodeError('Truncated tensor header', offset=len(raw))
    c, n, m = (int(v) for v in np.frombuffer(raw, dtype=NPYISH_HEADER, count=1)[0])
    expected = NPYISH_HEADER.itemsize + c * n * m * F32.itemsize
    if len(raw) != expected:
        raise DecodeError(f'Tensor payload of {c}x{n}x{m} needs {expected} bytes, file has {len(raw)}',
                          offset=min(len(raw), expected))
    return np.frombuffer(raw, dtype=F32, offset=NPYISH_HEADER.itemsize).reshape(c, n, m).copy()


def _prefix_paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + '.bin'), prefix.with_name(prefix.name + '.json')


def save_checkpoint(prefix: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    bin_path, manifest_path = _prefix_paths(prefix)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(bin_path, 'wb') as handle:
        for name, value in tensors.items():
            payload = np.ascontiguousarray(np.asarray(value, dtype=F32)).tobytes()
            entries.append({'name': name, 'shape': list(np.shape(value)), 'offset': offset})
            handle.write(payload)
            offset += len(payload)
    manifest = {'format': 'evdet-checkpoint-1', 'tensors': entries, 'meta': meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding='utf-8')
    logger.info('Saved checkpoint %s (%d tensors, %d bytes)', bin_path, len(entries), offset)
    return manifest_path


def load_checkpoint(prefix: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    bin_path, manifest_path = _prefix_paths(prefix)
    if not manifest_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f'Checkpoint {prefix} not found (expected {bin_path} and {manifest_path})')
    try:
        manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise DecodeError(f'Invalid checkpoint manifest {manifest_path}: {exc.msg}', offset=exc.pos) from exc
    raw = bin_path.read_bytes()
    tensors = {}
    for entry in manifest.get('tensors', []):
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry['offset'])
        end = offset + count * F32.itemsize
        if end > len(raw):
            raise DecodeError(f'Tensor {entry["name"]} runs past the end of {bin_path}', offset=offset)
        tensors[entry['name']] = np.frombuffer(raw, dtype=F32, count=count, offset=offset).reshape(shape).copy()
    return tensors, manifest.get('meta', {})


def resolve_checkpoint_prefix(path: str | Path) -> Path:
    """Accept either the prefix or one of the .bin/.json files."""
    path = Path(path)
    if path.suffix in ('.bin', '.json'):
        return path.with_suffix('')
    return path
