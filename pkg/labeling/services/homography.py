"""Homography estimation: normalized DLT, RANSAC, and an optional photometric refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from event_detection.exceptions import EstimationError
from event_detection.services.boxes import project_points

logger = logging.getLogger(__name__)

MIN_POINTS = 4


@dataclass
class HomographyResult:
    """matrix maps source (frame camera) pixels to destination (event camera) pixels."""

    matrix: np.ndarray
    inliers: np.ndarray
    rmse: float

    @property
    def inlier_count(self) -> int:
        return int(self.inliers.sum())

    def as_dict(self) -> dict:
        return {'matrix': self.matrix.tolist(), 'inlier_count': self.inlier_count, 'rmse': self.rmse}

    @classmethod
    def from_matrix(cls, matrix) -> 'HomographyResult':
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix / matrix[2, 2], np.zeros(0, dtype=bool), 0.0)


def _normalizer(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    spread = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array([[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]])


def dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography from >= 4 correspondences (normalized DLT)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape[0] < MIN_POINTS or src.shape != dst.shape:
        raise EstimationError(f'DLT needs at least {MIN_POINTS} matching point pairs, got {src.shape[0]}.')
    t_src, t_dst = _normalizer(src), _normalizer(dst)
    a = project_points(t_src, src)
    b = project_points(t_dst, dst)
    rows = []
    for (x, y), (u, v) in zip(a, b):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    normalized = vt[-1].reshape(3, 3)
    matrix = np.linalg.inv(t_dst) @ normalized @ t_src
    if abs(matrix[2, 2]) < 1e-12 or abs(np.linalg.det(matrix)) < 1e-12:
        raise EstimationError('Degenerate point configuration.')
    return matrix / matrix[2, 2]


def is_degenerate(points: np.ndarray, tol: float = 1e-6) -> bool:
    """True when any three of the points are (nearly) collinear."""
    points = np.asarray(points, dtype=np.float64)
    scale = max(np.ptp(points, axis=0).max(), 1.0)
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            for k in range(j + 1, len(points)):
                d1, d2 = points[j] - points[i], points[k] - points[i]
                if abs(d1[0] * d2[1] - d1[1] * d2[0]) <= tol * scale * scale:
                    return True
    return False


def reprojection_errors(matrix: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore', invalid='ignore'):
        mapped = project_points(matrix, src)
    errors = np.sqrt(((mapped - dst) ** 2).sum(axis=1))
    return np.where(np.isfinite(errors), errors, np.inf)


def estimate_homography(src_pts, dst_pts, ransac_iters: int = 1000, inlier_tol: float = 2.0,
                        seed: int = 0) -> HomographyResult:
    """RANSAC over 4-point DLT hypotheses, least-squares refit on the best consensus set."""
    src = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise EstimationError(f'Point sets differ in size: {src.shape[0]} vs {dst.shape[0]}.')
    if src.shape[0] < MIN_POINTS:
        raise EstimationError(f'At least {MIN_POINTS} correspondences are required, got {src.shape[0]}.')
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_error = np.inf
    degenerate = 0
    for _ in range(ransac_iters):
        sample = rng.choice(src.shape[0], MIN_POINTS, replace=False)
        if is_degenerate(src[sample]) or is_degenerate(dst[sample]):
            degenerate += 1
            continue
        try:
            hypothesis = dlt(src[sample], dst[sample])
        except EstimationError:
            degenerate += 1
            continue
        errors = reprojection_errors(hypothesis, src, dst)
        inliers = errors <= inlier_tol
        count = int(inliers.sum())
        error = float(errors[inliers].sum()) if count else np.inf
        if best_inliers is None or count > best_inliers.sum() or (count == best_inliers.sum() and error < best_error):
            best_inliers, best_error = inliers, error
    if degenerate:
        logger.warning('Skipped %d degenerate RANSAC samples out of %d', degenerate, ransac_iters)
    if best_inliers is None or best_inliers.sum() < MIN_POINTS:
        raise EstimationError('RANSAC found no non-degenerate hypothesis with enough support.')
    matrix = dlt(src[best_inliers], dst[best_inliers])
    inliers = reprojection_errors(matrix, src, dst) <= inlier_tol
    if inliers.sum() >= MIN_POINTS and not np.array_equal(inliers, best_inliers):
        matrix = dlt(src[inliers], dst[inliers])
    else:
        inliers = best_inliers
    errors = reprojection_errors(matrix, src[inliers], dst[inliers])
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    logger.info('Homography from %d/%d inliers, RMSE %.3f px', int(inliers.sum()), src.shape[0], rmse)
    return HomographyResult(matrix, inliers, rmse)


def photometric_cost(matrix: np.ndarray, src_image: np.ndarray, dst_image: np.ndarray) -> float:
    """Mean squared difference between dst and src warped into the dst frame, over valid pixels."""
    height, width = dst_image.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    back = project_points(np.linalg.inv(matrix), np.column_stack([xx.ravel(), yy.ravel()]))
    valid = ((back[:, 0] >= 0) & (back[:, 0] <= src_image.shape[1] - 1)
             & (back[:, 1] >= 0) & (back[:, 1] <= src_image.shape[0] - 1))
    if valid.sum() == 0:
        return float('inf')
    warped = ndimage.map_coordinates(src_image.astype(np.float64), [back[valid, 1], back[valid, 0]], order=1)
    return float(np.mean((warped - dst_image.ravel()[valid].astype(np.float64)) ** 2))


def refine_homography(matrix: np.ndarray, src_image: np.ndarray, dst_image: np.ndarray, iterations: int = 50,
                      step: float = 1.0, fd_eps: float = 0.05) -> np.ndarray:
    """Gradient descent on the photometric cost.

    H is parametrised by the pixel displacement of the four mapped source-image
    corners (8 numbers). A step is only taken when it lowers the cost.
    """
    height, width = src_image.shape
    src_corners = np.array([[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]])
    base = project_points(matrix, src_corners)
    params = np.zeros(8)

    def cost(p):
        try:
            candidate = dlt(src_corners, base + p.reshape(4, 2))
        except EstimationError:
            return float('inf')
        return photometric_cost(candidate, src_image, dst_image)

    current = cost(params)
    for _ in range(iterations):
        grad = np.zeros(8)
        for i in range(8):
            bump = np.zeros(8)
            bump[i] = fd_eps
            grad[i] = (cost(params + bump) - cost(params - bump)) / (2 * fd_eps)
        norm = np.linalg.norm(grad)
        if not np.isfinite(norm) or norm == 0:
            break
        rate = step
        while rate > 1e-3:
            trial = params - rate * grad / norm
            trial_cost = cost(trial)
            if trial_cost < current:
                params, current = trial, trial_cost
                break
            rate /= 2
        else:
            break
    refined = dlt(src_corners, base + params.reshape(4, 2))
    logger.debug('Photometric refinement finished at cost %.6f', current)
    return refined
