import logging

from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.presenters.report_presenter import present_error
from event_detection.services.detector.model import build_model
from event_detection.services.training import train
from event_detection.storage.dataset_storage import read_dataset
from event_detection.storage.report_storage import write_json

logger = logging.getLogger(__name__)

MODEL_CARD_FILE = 'model_card.json'


class TrainInteractor(PipelineInteractor):
    command = 'train'

    def execute(self, context: RunContext, data: str, val: str | None = None, resume: str | None = None) -> dict:
        config = context.config
        dataset = read_dataset(data)
        validation = read_dataset(val) if val else None
        model = build_model(config.network, config.train.seed)
        write_json(model.model_card(), context.out_dir / MODEL_CARD_FILE)
        result = train(model, dataset, config.train, config.repr, context.out_dir, validation, resume)
        return {
            'epochs': result.state.epoch,
            'global_step': result.state.global_step,
            'best_metric': result.state.best_metric,
            'best_checkpoint': str(result.best_checkpoint) if result.best_checkpoint else None,
            'last_checkpoint': str(result.last_checkpoint) if result.last_checkpoint else None,
            'parameter_count': model.parameter_count(),
            'history': result.history,
        }

    def enqueue(self, context: RunContext, options: dict) -> dict:
        """Record a PENDING run and hand it to a Celery worker."""
        from event_detection.tasks import run_training_pipeline

        run = self.run_storage.create_run(
            self.command, context.config.model_dump(mode='json'), options, context.seed, context.deterministic,
            str(context.out_dir),
        )
        if run is None:
            return present_error('Asynchronous training needs the run ledger; run migrate first.',
                                 'LEDGER_UNAVAILABLE')
        run_training_pipeline.delay(str(run.id))
        logger.info('Queued training run %s', run.id)
        return {'success': True, 'command': self.command, 'run_id': str(run.id), 'status': run.status,
                'out_dir': str(context.out_dir)}
