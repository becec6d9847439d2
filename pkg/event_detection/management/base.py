import json

from django.core.management.base import BaseCommand, CommandError

from event_detection.exceptions import EventDetectionError
from event_detection.interactors.pipeline_interactor import build_context
from event_detection.presenters.report_presenter import present_exception
from event_detection.storage.run_storage import RunStorage


class PipelineCommand(BaseCommand):
    """Shared --config/--seed/--out/--deterministic flags and the run lifecycle.

    Subclasses set interactor_class and forward their own options through
    command_options(). Failures print the error JSON to stderr and exit non-zero.
    """

    interactor_class = None

    def add_arguments(self, parser):
        parser.add_argument('--config', type=str, default=None, help='Run configuration JSON (defaults otherwise)')
        parser.add_argument('--seed', type=int, default=None, help='Seed for training, scene generation and RANSAC')
        parser.add_argument('--out', type=str, default=None, help='Output directory (default EVDET_RUNS_DIR/<command>-<time>)')
        parser.add_argument('--deterministic', action='store_true', help='Single worker; recorded in the report')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def command_options(self, options: dict) -> dict:
        return {}

    def build_context(self, options: dict):
        return build_context(
            self.interactor_class.command,
            config_path=options['config'],
            seed=options['seed'],
            out=options['out'],
            deterministic=options['deterministic'],
        )

    def handle(self, *args, **options):
        try:
            context = self.build_context(options)
        except EventDetectionError as exc:
            self.fail(present_exception(exc))
        payload = self.run(context, self.command_options(options))
        if not payload.get('success'):
            self.fail(payload)
        self.report(payload)

    def run(self, context, command_options: dict) -> dict:
        interactor = self.interactor_class(RunStorage())
        return interactor.run(context, command_options)

    def report(self, payload: dict):
        location = payload.get('report_path') or payload.get('out_dir')
        self.stdout.write(self.style.SUCCESS(f'{self.interactor_class.command} finished: {location}'))
        self.stdout.write(json.dumps(payload.get('result', payload), default=str))

    def fail(self, payload: dict):
        self.stderr.write(json.dumps(payload, default=str))
        raise CommandError(payload.get('message', 'Command failed'))
