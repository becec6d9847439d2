from event_detection.interactors.synth_interactor import SynthInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Generate synthetic event sequences with box labels (and optionally misaligned frame-camera views)'
    interactor_class = SynthInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('--count', type=int, default=1, help='Number of scenes; scene i uses seed + i')
        parser.add_argument('--frames', action='store_true', help='Also write PGM frames and frame-camera labels')
        parser.add_argument('--offset-us', type=int, default=0, help='Frame clock offset planted in --frames output')
        parser.add_argument('--homography', type=str, default=None, help='Frame-to-event homography JSON for --frames')

    def command_options(self, options):
        return {
            'count': options['count'],
            'frames': options['frames'],
            'offset_us': options['offset_us'],
            'homography': options['homography'],
        }
