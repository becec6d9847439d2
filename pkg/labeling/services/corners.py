"""Harris corner points from an event histogram or a grayscale frame."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from event_detection.services.representations import ReprTensor

DEFAULT_K = 0.04
DEFAULT_THRESH = 0.01


def harris_response(image: np.ndarray, k: float = DEFAULT_K, sigma: float = 1.0) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    gx = ndimage.sobel(image, axis=1, mode='nearest')
    gy = ndimage.sobel(image, axis=0, mode='nearest')
    sxx = ndimage.gaussian_filter(gx * gx, sigma)
    syy = ndimage.gaussian_filter(gy * gy, sigma)
    sxy = ndimage.gaussian_filter(gx * gy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(source: ReprTensor | np.ndarray, k: float = DEFAULT_K, thresh: float = DEFAULT_THRESH,
                   min_distance: int = 3, max_points: int | None = None) -> np.ndarray:
    """(x, y) local maxima of the Harris response above thresh * max response, strongest first.

    A multi-channel histogram is summed over channels before scoring.
    """
    values = source.values if isinstance(source, ReprTensor) else np.asarray(source)
    image = values.sum(axis=0) if values.ndim == 3 else values
    response = harris_response(image, k)
    peak = response.max() if response.size else 0.0
    if peak <= 0:
        return np.zeros((0, 2), dtype=np.float64)
    local_max = ndimage.maximum_filter(response, size=2 * min_distance + 1, mode='constant', cval=-np.inf)
    mask = (response == local_max) & (response > thresh * peak)
    ys, xs = np.nonzero(mask)
    order = np.argsort(-response[ys, xs], kind='stable')
    points = np.column_stack([xs[order], ys[order]]).astype(np.float64)
    return points[:max_points] if max_points else points


def _patch(image: np.ndarray, x: int, y: int, radius: int) -> np.ndarray | None:
    if y - radius < 0 or x - radius < 0 or y + radius >= image.shape[0] or x + radius >= image.shape[1]:
        return None
    patch = image[y - radius:y + radius + 1, x - radius:x + radius + 1].astype(np.float64)
    patch = patch - patch.mean()
    norm = np.sqrt((patch * patch).sum())
    return patch / norm if norm > 0 else None


def match_corners(src_image: np.ndarray, dst_image: np.ndarray, src_pts: np.ndarray, dst_pts: np.ndarray,
                  radius: int = 5, max_distance: float = 40.0, min_score: float = 0.6) -> tuple[np.ndarray, np.ndarray]:
    """Mutual-best patch ZNCC matches between two corner sets within max_distance pixels."""
    src_patches = [_patch(src_image, int(x), int(y), radius) for x, y in src_pts]
    dst_patches = [_patch(dst_image, int(x), int(y), radius) for x, y in dst_pts]
    scores = np.full((len(src_pts), len(dst_pts)), -np.inf)
    for i, a in enumerate(src_patches):
        if a is None:
            continue
        for j, b in enumerate(dst_patches):
            if b is None or np.hypot(*(np.asarray(src_pts[i]) - np.asarray(dst_pts[j]))) > max_distance:
                continue
            scores[i, j] = float((a * b).sum())
    src_out, dst_out = [], []
    if scores.size:
        best_dst = scores.argmax(axis=1)
        best_src = scores.argmax(axis=0)
        for i, j in enumerate(best_dst):
            if best_src[j] == i and scores[i, j] >= min_score:
                src_out.append(src_pts[i])
                dst_out.append(dst_pts[j])
    return np.asarray(src_out, dtype=np.float64).reshape(-1, 2), np.asarray(dst_out, dtype=np.float64).reshape(-1, 2)
