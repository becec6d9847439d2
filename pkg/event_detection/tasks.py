from pathlib import Path

from celery import shared_task
from django.conf import settings

from event_detection.interactors.pipeline_interactor import RunContext
from event_detection.interactors.train_interactor import TrainInteractor
from event_detection.models import PipelineRun
from event_detection.services.run_config import load_run_config_dict
from event_detection.storage.run_storage import RunStorage


@shared_task(bind=True, soft_time_limit=24 * 3600)
def run_training_pipeline(self, run_id):
    training_run = PipelineRun.objects.filter(id=run_id).first()
    if not training_run:
        return {'status': 'MISSING'}

    if training_run.status in (PipelineRun.STATUS_COMPLETED, PipelineRun.STATUS_FAILED):
        return {'status': training_run.status}

    try:
        context = RunContext(
            config=load_run_config_dict(training_run.resolved_config),
            seed=training_run.seed,
            deterministic=training_run.deterministic,
            threads=1 if training_run.deterministic else settings.EVDET_THREADS,
            out_dir=Path(training_run.output_dir),
        )
        payload = TrainInteractor(RunStorage()).execute_run(training_run, context, training_run.options)
    except Exception as exc:
        training_run.status = PipelineRun.STATUS_FAILED
        training_run.error_code = 'TRAINING_PIPELINE_ERROR'
        training_run.error_message = str(exc)
        training_run.save(update_fields=['status', 'error_code', 'error_message', 'updated_at'])
        raise
    if not payload['success']:
        return {'status': PipelineRun.STATUS_FAILED, 'error': payload['error']}
    return {'status': PipelineRun.STATUS_COMPLETED, 'report_path': payload['report_path']}
