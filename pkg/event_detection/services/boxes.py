"""Box algebra: IoU, SSD encoding against anchors, anchor matching, NMS and size filtering.

Boxes are stored top-left (x, y, w, h) in pixels. Anchors are stored as
centre form (cx, cy, w, h), the form the SSD encoding is defined in.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from event_detection.exceptions import ArgumentError

VARIANCES = (0.1, 0.2)
DEFAULT_MATCH_IOU = 0.5
DEFAULT_MIN_DIAG = 60.0
DEFAULT_MIN_SIDE = 20.0
DEFAULT_MAX_DETECTIONS = 100


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    class_id: int
    t: int = 0
    track_id: int = -1
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ArgumentError(f'Box dimensions must be positive, got w={self.w} h={self.h}.')

    @property
    def xywh(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h

    @property
    def center(self) -> tuple[float, float, float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0, self.w, self.h

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.w, self.h))


@dataclass(frozen=True)
class BoxFrame:
    """All boxes sharing one timestamp."""

    t: int
    boxes: tuple[Box, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.boxes)

    def xywh(self) -> np.ndarray:
        return boxes_to_array(self.boxes)

    def classes(self) -> np.ndarray:
        return np.array([box.class_id for box in self.boxes], dtype=np.int64)

    def scores(self) -> np.ndarray:
        return np.array([box.confidence for box in self.boxes], dtype=np.float64)


@dataclass
class MatchResult:
    """Per-anchor assignment: matched_gt[a] is a GT index or -1, deltas are SSD targets."""

    matched_gt: np.ndarray
    deltas: np.ndarray
    labels: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.matched_gt >= 0

    @property
    def num_positive(self) -> int:
        return int(self.positive.sum())


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    rows = [box.xywh for box in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def group_frames(boxes: Iterable[Box]) -> list[BoxFrame]:
    """Group boxes by timestamp, preserving order inside each timestamp."""
    grouped: dict[int, list[Box]] = {}
    for box in boxes:
        grouped.setdefault(int(box.t), []).append(box)
    return [BoxFrame(t, tuple(grouped[t])) for t in sorted(grouped)]


def xywh_to_corners(xywh: np.ndarray) -> np.ndarray:
    xywh = np.asarray(xywh, dtype=np.float64).reshape(-1, 4)
    return np.stack([xywh[:, 0], xywh[:, 1], xywh[:, 0] + xywh[:, 2], xywh[:, 1] + xywh[:, 3]], axis=1)


def center_to_xywh(cxcywh: np.ndarray) -> np.ndarray:
    cxcywh = np.asarray(cxcywh, dtype=np.float64).reshape(-1, 4)
    return np.stack([
        cxcywh[:, 0] - cxcywh[:, 2] / 2.0,
        cxcywh[:, 1] - cxcywh[:, 3] / 2.0,
        cxcywh[:, 2],
        cxcywh[:, 3],
    ], axis=1)


def xywh_to_center(xywh: np.ndarray) -> np.ndarray:
    xywh = np.asarray(xywh, dtype=np.float64).reshape(-1, 4)
    return np.stack([
        xywh[:, 0] + xywh[:, 2] / 2.0,
        xywh[:, 1] + xywh[:, 3] / 2.0,
        xywh[:, 2],
        xywh[:, 3],
    ], axis=1)


def iou_matrix(a_xywh: np.ndarray, b_xywh: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two box arrays in (x, y, w, h) form, shape (len(a), len(b))."""
    a = xywh_to_corners(a_xywh)
    b = xywh_to_corners(b_xywh)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid='ignore', divide='ignore'):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def iou(a: Box, b: Box) -> float:
    return float(iou_matrix(np.asarray([a.xywh]), np.asarray([b.xywh]))[0, 0])


def encode_boxes(gt_xywh: np.ndarray, anchors_cxcywh: np.ndarray, variances=VARIANCES) -> np.ndarray:
    """SSD deltas of boxes against row-aligned anchors."""
    gt = xywh_to_center(gt_xywh)
    anchors = np.asarray(anchors_cxcywh, dtype=np.float64).reshape(-1, 4)
    if np.any(gt[:, 2:] <= 0) or np.any(anchors[:, 2:] <= 0):
        raise ArgumentError('Boxes and anchors must have positive width and height.')
    v1, v2 = variances
    return np.stack([
        (gt[:, 0] - anchors[:, 0]) / anchors[:, 2] / v1,
        (gt[:, 1] - anchors[:, 1]) / anchors[:, 3] / v1,
        np.log(gt[:, 2] / anchors[:, 2]) / v2,
        np.log(gt[:, 3] / anchors[:, 3]) / v2,
    ], axis=1)


def decode_boxes(deltas: np.ndarray, anchors_cxcywh: np.ndarray, variances=VARIANCES) -> np.ndarray:
    """Inverse of encode_boxes, returning (x, y, w, h) rows."""
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    anchors = np.asarray(anchors_cxcywh, dtype=np.float64).reshape(-1, 4)
    v1, v2 = variances
    cx = deltas[:, 0] * v1 * anchors[:, 2] + anchors[:, 0]
    cy = deltas[:, 1] * v1 * anchors[:, 3] + anchors[:, 1]
    # exp overflow guard for untrained heads
    w = np.exp(np.clip(deltas[:, 2] * v2, -20.0, 20.0)) * anchors[:, 2]
    h = np.exp(np.clip(deltas[:, 3] * v2, -20.0, 20.0)) * anchors[:, 3]
    return center_to_xywh(np.stack([cx, cy, w, h], axis=1))


def encode(box: Box, anchor: Box, variances=VARIANCES) -> np.ndarray:
    return encode_boxes(np.asarray([box.xywh]), np.asarray([anchor.center]), variances)[0]


def decode(deltas: Sequence[float], anchor: Box, variances=VARIANCES, class_id: int | None = None) -> Box:
    x, y, w, h = decode_boxes(np.asarray(deltas), np.asarray([anchor.center]), variances)[0]
    return Box(float(x), float(y), float(w), float(h),
               class_id=anchor.class_id if class_id is None else class_id, t=anchor.t)


def match_anchors(gts: BoxFrame | Sequence[Box], anchors_cxcywh: np.ndarray,
                  iou_thresh: float = DEFAULT_MATCH_IOU, variances=VARIANCES) -> MatchResult:
    """SSD matching: greedy bipartite best pairs first, then every anchor above iou_thresh.

    The bipartite stage repeatedly takes the globally highest IoU among unassigned
    GTs and anchors (ties go to the lowest GT, then lowest anchor index), so each GT
    with any overlap gets at least one anchor, even below the threshold. The
    threshold stage then assigns each remaining anchor to its best GT.
    """
    boxes = list(gts.boxes if isinstance(gts, BoxFrame) else gts)
    anchors = np.asarray(anchors_cxcywh, dtype=np.float64).reshape(-1, 4)
    num_anchors = anchors.shape[0]
    matched = np.full(num_anchors, -1, dtype=np.int64)
    deltas = np.zeros((num_anchors, 4), dtype=np.float64)
    labels = np.full(num_anchors, -1, dtype=np.int64)
    if not boxes or num_anchors == 0:
        return MatchResult(matched, deltas, labels)

    gt_xywh = boxes_to_array(boxes)
    overlaps = iou_matrix(gt_xywh, center_to_xywh(anchors))
    work = overlaps.copy()
    for _ in range(min(len(boxes), num_anchors)):
        flat = int(np.argmax(work))
        g, a = divmod(flat, num_anchors)
        if work[g, a] <= 0.0:
            break
        matched[a] = g
        work[g, :] = -1.0
        work[:, a] = -1.0

    best_gt = np.argmax(overlaps, axis=0)
    best_iou = overlaps[best_gt, np.arange(num_anchors)]
    extra = (matched < 0) & (best_iou >= iou_thresh)
    matched[extra] = best_gt[extra]

    positive = matched >= 0
    if positive.any():
        deltas[positive] = encode_boxes(gt_xywh[matched[positive]], anchors[positive], variances)
        classes = np.array([box.class_id for box in boxes], dtype=np.int64)
        labels[positive] = classes[matched[positive]]
    return MatchResult(matched, deltas, labels)


def nms_indices(xywh: np.ndarray, scores: np.ndarray, classes: np.ndarray,
                iou_thresh: float = 0.5, score_thresh: float = 0.0,
                max_detections: int = DEFAULT_MAX_DETECTIONS) -> np.ndarray:
    """Indices kept by per-class greedy NMS, in descending score order (stable)."""
    xywh = np.asarray(xywh, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    classes = np.asarray(classes).reshape(-1)
    candidates = np.flatnonzero(scores >= score_thresh)
    order = candidates[np.argsort(-scores[candidates], kind='stable')]
    keep = []
    for cls in np.unique(classes[order]):
        cls_order = order[classes[order] == cls]
        overlaps = iou_matrix(xywh[cls_order], xywh[cls_order])
        suppressed = np.zeros(cls_order.shape[0], dtype=bool)
        for i in range(cls_order.shape[0]):
            if suppressed[i]:
                continue
            keep.append(int(cls_order[i]))
            suppressed |= overlaps[i] > iou_thresh
    keep = np.asarray(keep, dtype=np.int64)
    if keep.size:
        # merge classes back into a single stable score ordering
        rank = {int(idx): pos for pos, idx in enumerate(order)}
        keep = np.asarray(sorted(keep.tolist(), key=rank.__getitem__), dtype=np.int64)
    return keep[:max_detections]


def nms(boxes: Sequence[Box], iou_thresh: float = 0.5, score_thresh: float = 0.0,
        max_detections: int = DEFAULT_MAX_DETECTIONS) -> list[Box]:
    boxes = list(boxes)
    if not boxes:
        return []
    keep = nms_indices(
        boxes_to_array(boxes),
        np.array([box.confidence for box in boxes]),
        np.array([box.class_id for box in boxes]),
        iou_thresh,
        score_thresh,
        max_detections,
    )
    return [boxes[i] for i in keep]


def size_mask(xywh: np.ndarray, min_diag: float = DEFAULT_MIN_DIAG, min_side: float = DEFAULT_MIN_SIDE) -> np.ndarray:
    xywh = np.asarray(xywh, dtype=np.float64).reshape(-1, 4)
    diag = np.hypot(xywh[:, 2], xywh[:, 3])
    return (diag >= min_diag) & (xywh[:, 2] >= min_side) & (xywh[:, 3] >= min_side)


def filter_boxes(frame: BoxFrame, min_diag: float = DEFAULT_MIN_DIAG,
                 min_side: float = DEFAULT_MIN_SIDE) -> BoxFrame:
    """Drop boxes whose diagonal is under min_diag or whose side is under min_side."""
    if not frame.boxes:
        return frame
    mask = size_mask(frame.xywh(), min_diag, min_side)
    return BoxFrame(frame.t, tuple(box for box, keep in zip(frame.boxes, mask) if keep))


def clip_box(box: Box, width: int, height: int) -> Box | None:
    """Clip to [0, width] x [0, height]; None when nothing is left inside."""
    x1 = min(max(box.x, 0.0), float(width))
    y1 = min(max(box.y, 0.0), float(height))
    x2 = min(max(box.x + box.w, 0.0), float(width))
    y2 = min(max(box.y + box.h, 0.0), float(height))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return replace(box, x=x1, y=y1, w=x2 - x1, h=y2 - y1)


def clip_frame(frame: BoxFrame, width: int, height: int) -> BoxFrame:
    clipped = (clip_box(box, width, height) for box in frame.boxes)
    return BoxFrame(frame.t, tuple(box for box in clipped if box is not None))


def check_homography(homography) -> np.ndarray:
    """Validated 3x3 projective matrix scaled so the bottom-right entry is 1."""
    matrix = np.asarray(homography, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)) or abs(matrix[2, 2]) < 1e-12:
        raise ArgumentError('Homography must be a finite 3x3 matrix with a non-zero last entry.')
    matrix = matrix / matrix[2, 2]
    if abs(np.linalg.det(matrix)) < 1e-12:
        raise ArgumentError('Homography is singular.')
    return matrix


def project_points(homography: np.ndarray, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mapped = np.column_stack([points, np.ones(points.shape[0])]) @ np.asarray(homography, dtype=np.float64).T
    return mapped[:, :2] / mapped[:, 2:3]


def map_box(box: Box, homography: np.ndarray, t: int | None = None) -> Box | None:
    """Axis-aligned hull of the box's four corners mapped through the homography."""
    x1, y1, x2, y2 = xywh_to_corners(np.asarray([box.xywh]))[0]
    corners = project_points(homography, np.array([[x1, y1], [x2, y1], [x2, y2], [x1, y2]]))
    if not np.all(np.isfinite(corners)):
        return None
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    if not np.all(hi > lo):
        return None
    return replace(box, x=float(lo[0]), y=float(lo[1]), w=float(hi[0] - lo[0]), h=float(hi[1] - lo[1]),
                   t=box.t if t is None else t)
