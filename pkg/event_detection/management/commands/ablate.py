from event_detection.interactors.ablation_interactor import AblationInteractor
from event_detection.management.base import PipelineCommand


class Command(PipelineCommand):
    help = 'Train and score the baseline next to memory, consistency-loss and representation ablations'
    interactor_class = AblationInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('data', type=str, help='Training dataset directory')
        parser.add_argument('test', type=str, help='Test dataset directory (stop intervals read from .meta.json)')
        parser.add_argument('--no-memory', action='store_true', help='Add a run with recurrent state forced to zero')
        parser.add_argument('--no-consistency', action='store_true', help='Add a run without the consistency loss')
        parser.add_argument('--repr', dest='repr_kinds', action='append',
                            choices=['histogram', 'time_surface', 'event_volume'], default=None,
                            help='Add a run per representation (repeatable)')
        parser.add_argument('--seeds', type=int, default=1, help='Seeds per condition, counted up from --seed')
        parser.add_argument('--bins', type=int, default=100, help='Track IoU curve bins')

    def command_options(self, options):
        return {
            'data': options['data'],
            'test': options['test'],
            'no_memory': options['no_memory'],
            'no_consistency': options['no_consistency'],
            'repr_kinds': options['repr_kinds'] or [],
            'seeds': options['seeds'],
            'bins': options['bins'],
        }
