from event_detection.interactors.train_interactor import TrainInteractor
from event_detection.management.base import PipelineCommand
from event_detection.storage.run_storage import RunStorage


class Command(PipelineCommand):
    help = 'Train the recurrent detector on a dataset directory of .evt + .boxes.jsonl pairs'
    interactor_class = TrainInteractor

    def add_command_arguments(self, parser):
        parser.add_argument('data', type=str, help='Training dataset directory')
        parser.add_argument('--val', type=str, default=None, help='Validation dataset directory')
        parser.add_argument('--resume', type=str, default=None, help='Checkpoint prefix to resume from')
        parser.add_argument('--async', dest='run_async', action='store_true',
                            help='Queue the run on a Celery worker instead of training in-process')

    def command_options(self, options):
        return {'data': options['data'], 'val': options['val'], 'resume': options['resume']}

    def handle(self, *args, **options):
        self._run_async = options['run_async']
        super().handle(*args, **options)

    def run(self, context, command_options):
        interactor = TrainInteractor(RunStorage())
        if self._run_async:
            return interactor.enqueue(context, command_options)
        return interactor.run(context, command_options)
