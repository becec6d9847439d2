from event_detection.interactors.stats_interactor import StatsInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Event stream statistics and the Event Volume construction benchmark'
    interactor_class = StatsInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('events', type=str, nargs='?', default=None, help='Event file (.evt)')
        parser.add_argument('--benchmark', action='store_true',
                            help='Time Event Volume construction on synthetic events at 1280x720')
        parser.add_argument('--benchmark-events', type=int, default=1_000_000)

    def command_options(self, options):
        return {
            'events': options['events'],
            'benchmark': options['benchmark'],
            'benchmark_events': options['benchmark_events'],
        }
