import json
import logging
from pathlib import Path

import numpy as np

from event_detection.exceptions import ArgumentError, DecodeError
from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.storage.box_storage import read_box_frames, write_box_frames
from event_detection.storage.event_storage import read_stream
from event_detection.storage.report_storage import write_json
from labeling.services.correspondences import event_frame_correspondences, gradient_magnitude, histogram_at
from labeling.services.homography import HomographyResult, estimate_homography, refine_homography
from labeling.services.sync import SyncResult, sync_stream_to_frames
from labeling.services.transfer import transfer_labels
from labeling.storage.correspondence_storage import read_correspondences
from labeling.storage.frame_storage import read_frames
from labeling.storage.homography_storage import read_homography, write_homography

logger = logging.getLogger(__name__)

TRANSFERRED_FILE = 'transferred.boxes.jsonl'
HOMOGRAPHY_FILE = 'homography.json'
SYNC_FILE = 'sync.json'


def read_sync(path: str) -> SyncResult:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        return SyncResult(int(data['offset_us']), data.get('lags', {}), data.get('scores', {}),
                          data.get('method', 'median'))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f'Invalid sync file {path}: {exc}') from exc


def _normalised(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    peak = image.max() if image.size else 0.0
    return image / peak if peak > 0 else image


class TransferLabelsInteractor(PipelineInteractor):
    """Clock offset from --offset-us, a sync.json, or events+frames; H from a JSON, a correspondence CSV,
    or Harris matches between frames and event histograms."""

    command = 'transfer_labels'

    def execute(self, context: RunContext, labels: str, events: str | None = None, frames: str | None = None,
                sync: str | None = None, offset_us: int | None = None, homography: str | None = None,
                correspondences: str | None = None, width: int | None = None, height: int | None = None,
                refine: bool = False) -> dict:
        cfg = context.config.labeling
        stream = read_stream(events) if events else None
        images = read_frames(frames) if frames else None

        if offset_us is not None:
            sync_result = SyncResult(int(offset_us), method='given')
        elif sync:
            sync_result = read_sync(sync)
        elif stream is not None and images is not None:
            sync_result = sync_stream_to_frames(stream, images, cfg.rate_hz, cfg.max_lag_us)
        else:
            raise ArgumentError('Clock offset needs --offset-us, --sync, or both --events and --frames.')

        if homography:
            result = read_homography(homography)
        elif correspondences:
            src, dst = read_correspondences(correspondences)
            result = estimate_homography(src, dst, cfg.ransac_iters, cfg.inlier_tol, cfg.seed)
        elif stream is not None and images:
            src, dst = event_frame_correspondences(stream, images, sync_result, cfg)
            result = estimate_homography(src, dst, cfg.ransac_iters, cfg.inlier_tol, cfg.seed)
        else:
            raise ArgumentError('Homography needs --homography, --correspondences, or both --events and --frames.')

        if refine or cfg.refine:
            if stream is None or not images:
                raise ArgumentError('Photometric refinement needs --events and --frames.')
            t_frame, image = images[len(images) // 2]
            histogram = histogram_at(stream, t_frame + sync_result.offset_us, int(round(1e6 / cfg.rate_hz)))
            matrix = refine_homography(result.matrix, _normalised(gradient_magnitude(image)), _normalised(histogram),
                                       iterations=cfg.refine_iters)
            result = HomographyResult(matrix, result.inliers, result.rmse)

        if stream is not None:
            dims = (stream.width, stream.height)
        elif width and height:
            dims = (width, height)
        else:
            raise ArgumentError('Target sensor size needs --events or both --width and --height.')

        transferred = transfer_labels(read_box_frames(labels), sync_result, result, dims)
        labels_path = write_box_frames(transferred, context.out_dir / TRANSFERRED_FILE)
        write_homography(result, context.out_dir / HOMOGRAPHY_FILE)
        write_json(sync_result.as_dict(), context.out_dir / SYNC_FILE)
        return {
            'sync': sync_result.as_dict(),
            'homography': result.as_dict(),
            'frames': len(transferred),
            'boxes': sum(len(frame) for frame in transferred),
            'labels_path': str(labels_path),
        }
