from event_detection.interactors.eval_interactor import TrackIouInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Mean IoU against normalised track time, written as CSV'
    interactor_class = TrackIouInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('detections', type=str, help='Detection .boxes.jsonl')
        parser.add_argument('labels', type=str, help='Ground-truth .boxes.jsonl with track ids')
        parser.add_argument('--bins', type=int, default=100)
        parser.add_argument('--delta-t', type=int, default=None,
                            help='Detector step in microseconds (default inference.delta_t_us)')

    def command_options(self, options):
        return {
            'detections': options['detections'],
            'labels': options['labels'],
            'bins': options['bins'],
            'delta_t': options['delta_t'],
        }
