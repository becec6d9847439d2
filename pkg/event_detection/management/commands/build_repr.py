from event_detection.interactors.repr_interactor import BuildReprInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Slice an event file and write one representation tensor (.npyish) per slice'
    interactor_class = BuildReprInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('events', type=str, help='Event file (.evt)')
        parser.add_argument('--delta-t', type=int, default=None, help='Slice length in microseconds')
        parser.add_argument('--repr', dest='kind', choices=['histogram', 'time_surface', 'event_volume'],
                            default=None, help='Override the configured representation')

    def command_options(self, options):
        return {'events': options['events'], 'delta_t': options['delta_t'], 'kind': options['kind']}
