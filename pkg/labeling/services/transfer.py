"""Map frame-camera labels into the event camera's clock and pixel grid."""

from __future__ import annotations

import logging

from event_detection.services.boxes import BoxFrame, check_homography, clip_box, map_box
from labeling.services.homography import HomographyResult
from labeling.services.sync import SyncResult

logger = logging.getLogger(__name__)


def transfer_labels(frames: list[BoxFrame], sync: SyncResult, homography: HomographyResult,
                    target_dims: tuple[int, int]) -> list[BoxFrame]:
    """Shift timestamps by the clock offset and replace each box by the clipped hull of its mapped corners.

    target_dims is (width, height); boxes left entirely outside the sensor are dropped.
    """
    matrix = check_homography(homography.matrix)
    width, height = target_dims
    transferred = []
    dropped = 0
    for frame in frames:
        t = frame.t + sync.offset_us
        boxes = []
        for box in frame.boxes:
            mapped = map_box(box, matrix, t)
            mapped = clip_box(mapped, width, height) if mapped is not None else None
            if mapped is None:
                dropped += 1
                continue
            boxes.append(mapped)
        transferred.append(BoxFrame(t, tuple(boxes)))
    if dropped:
        logger.info('Dropped %d boxes that map outside the %dx%d sensor', dropped, width, height)
    return transferred
