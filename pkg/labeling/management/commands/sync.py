from event_detection.management.base import PipelineCommand
from labeling.interactors.sync_interactor import SyncInteractor


class Command(PipelineCommand):
    help = 'Estimate the clock offset between an event file and a directory of <timestamp_us>.pgm frames'
    interactor_class = SyncInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('events', type=str, help='Event file (.evt)')
        parser.add_argument('frames', type=str, help='Directory of <timestamp_us>.pgm frames')

    def command_options(self, options):
        return {'events': options['events'], 'frames': options['frames']}
