import logging

from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.storage.event_storage import read_stream
from event_detection.storage.report_storage import write_json
from labeling.services.sync import sync_stream_to_frames
from labeling.storage.frame_storage import read_frames

logger = logging.getLogger(__name__)

SYNC_FILE = 'sync.json'


class SyncInteractor(PipelineInteractor):
    command = 'sync'

    def execute(self, context: RunContext, events: str, frames: str) -> dict:
        cfg = context.config.labeling
        stream = read_stream(events)
        images = read_frames(frames)
        result = sync_stream_to_frames(stream, images, cfg.rate_hz, cfg.max_lag_us)
        path = write_json(result.as_dict(), context.out_dir / SYNC_FILE)
        logger.info('Clock offset %d us (%s)', result.offset_us, path)
        return {**result.as_dict(), 'sync_path': str(path)}
