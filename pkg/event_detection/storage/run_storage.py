"""PipelineRun ledger; the files on disk stay the source of truth when the database is unavailable."""

from __future__ import annotations

import logging
from typing import Optional

from django.db import DatabaseError
from django.utils import timezone

from event_detection.models import PipelineRun

logger = logging.getLogger(__name__)


class RunStorage:

    def create_run(self, command: str, resolved_config: dict, options: dict, seed: int, deterministic: bool,
                   output_dir: str) -> Optional[PipelineRun]:
        try:
            return PipelineRun.objects.create(
                command=command,
                resolved_config=resolved_config,
                options=options,
                seed=seed,
                deterministic=deterministic,
                output_dir=output_dir,
            )
        except DatabaseError as exc:
            logger.warning('Run ledger unavailable, continuing without it: %s', exc)
            return None

    def get_run(self, run_id) -> Optional[PipelineRun]:
        try:
            return PipelineRun.objects.filter(id=run_id).first()
        except DatabaseError as exc:
            logger.warning('Run ledger unavailable: %s', exc)
            return None

    def _save(self, run: Optional[PipelineRun], fields: list[str]):
        if run is None:
            return
        try:
            run.save(update_fields=fields + ['updated_at'])
        except DatabaseError as exc:
            logger.warning('Could not update run %s: %s', run.id, exc)

    def start(self, run: Optional[PipelineRun]):
        if run is None:
            return
        run.status = PipelineRun.STATUS_RUNNING
        run.started_at = timezone.now()
        self._save(run, ['status', 'started_at'])

    def complete(self, run: Optional[PipelineRun], metrics: dict):
        if run is None:
            return
        run.status = PipelineRun.STATUS_COMPLETED
        run.metrics = metrics
        run.completed_at = timezone.now()
        self._save(run, ['status', 'metrics', 'completed_at'])

    def fail(self, run: Optional[PipelineRun], error_code: str, error_message: str):
        if run is None:
            return
        run.status = PipelineRun.STATUS_FAILED
        run.error_code = error_code
        run.error_message = error_message
        run.completed_at = timezone.now()
        self._save(run, ['status', 'error_code', 'error_message', 'completed_at'])
