import logging

from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.inference import detect_stream
from event_detection.services.training import load_detector
from event_detection.storage.box_storage import write_box_frames
from event_detection.storage.event_storage import read_stream
from event_detection.storage.report_storage import append_jsonl

logger = logging.getLogger(__name__)

DETECTIONS_FILE = 'detections.boxes.jsonl'
THROUGHPUT_FILE = 'inference.jsonl'


class DetectInteractor(PipelineInteractor):
    """Network and representation come from the checkpoint; thresholds from the inference section."""

    command = 'detect'

    def execute(self, context: RunContext, events: str, checkpoint: str) -> dict:
        model, repr_cfg = load_detector(checkpoint)
        stream = read_stream(events)
        frames, metrics = detect_stream(model, stream, repr_cfg, context.config.inference)
        path = write_box_frames(frames, context.out_dir / DETECTIONS_FILE)
        append_jsonl({'events_file': events, **metrics}, context.out_dir / THROUGHPUT_FILE)
        return {
            'detections_path': str(path),
            'steps': len(frames),
            'num_boxes': sum(len(frame) for frame in frames),
            'repr_kind': repr_cfg.kind,
            'throughput': metrics,
        }
