"""Point correspondences between frame-camera images and event histograms taken at the same instant."""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from event_detection.services.events_core import EventStream, TimeSlice
from event_detection.services.representations import ReprConfig, build_histogram
from labeling.services.config import LabelingConfig
from labeling.services.corners import harris_corners, match_corners
from labeling.services.sync import SyncResult

logger = logging.getLogger(__name__)

MAX_POINTS = 200


def histogram_at(stream: EventStream, t_center: int, window_us: int) -> np.ndarray:
    """Channel-summed event histogram of [t_center - window/2, t_center + window/2)."""
    t_start = max(int(t_center - window_us // 2), 0)
    t_end = max(t_start + int(window_us), t_start + 1)
    times = stream.events['t']
    lo, hi = np.searchsorted(times, [t_start, t_end], side='left')
    time_slice = TimeSlice(t_start, t_end, stream.events[lo:hi], stream.width, stream.height)
    return build_histogram(time_slice, ReprConfig(kind='histogram')).values.sum(axis=0)


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return np.hypot(ndimage.sobel(image, axis=1, mode='nearest'), ndimage.sobel(image, axis=0, mode='nearest'))


def event_frame_correspondences(stream: EventStream, frames: list[tuple[int, np.ndarray]], sync: SyncResult,
                                cfg: LabelingConfig, samples: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Harris points of frame gradients (src) matched to Harris points of event histograms (dst).

    Up to `samples` evenly spaced frames are used; the histogram spans one
    1/rate period around the frame time moved onto the event clock.
    """
    window = int(round(1e6 / cfg.rate_hz))
    chosen = np.unique(np.linspace(0, len(frames) - 1, min(samples, len(frames))).astype(int)) if frames else []
    src_all, dst_all = [], []
    for index in chosen:
        t_frame, image = frames[index]
        t_event = t_frame + sync.offset_us
        if t_event < 0 or t_event > stream.t_end:
            continue
        frame_edges = gradient_magnitude(image)
        histogram = histogram_at(stream, t_event, window)
        src_pts = harris_corners(frame_edges, cfg.harris_k, cfg.harris_thresh, max_points=MAX_POINTS)
        dst_pts = harris_corners(histogram, cfg.harris_k, cfg.harris_thresh, max_points=MAX_POINTS)
        if not len(src_pts) or not len(dst_pts):
            continue
        src, dst = match_corners(frame_edges, histogram, src_pts, dst_pts)
        src_all.append(src)
        dst_all.append(dst)
    src = np.vstack(src_all) if src_all else np.zeros((0, 2))
    dst = np.vstack(dst_all) if dst_all else np.zeros((0, 2))
    logger.info('Matched %d corner pairs over %d frames', len(src), len(chosen))
    return src, dst
