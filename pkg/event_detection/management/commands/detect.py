from event_detection.interactors.detect_interactor import DetectInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Run a trained detector causally over an event file'
    interactor_class = DetectInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('events', type=str, help='Event file (.evt)')
        parser.add_argument('checkpoint', type=str, help='Checkpoint prefix (or its .bin/.json file)')

    def command_options(self, options):
        return {'events': options['events'], 'checkpoint': options['checkpoint']}
