from event_detection.interactors.eval_interactor import EvalInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'COCO-style mAP of detections against labels'
    interactor_class = EvalInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('detections', type=str, help='Detection .boxes.jsonl')
        parser.add_argument('labels', type=str, help='Ground-truth .boxes.jsonl')
        parser.add_argument('--delta-t', type=int, default=None,
                            help='Detector step in microseconds (default inference.delta_t_us)')
        parser.add_argument('--events', type=str, default=None, help='Event file, needed for event_fraction warmup')

    def command_options(self, options):
        return {
            'detections': options['detections'],
            'labels': options['labels'],
            'delta_t': options['delta_t'],
            'events': options['events'],
        }
