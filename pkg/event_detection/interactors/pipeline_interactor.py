"""Shared command lifecycle: resolve the run context, record the run, execute, report."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from django.utils import timezone

from event_detection.exceptions import EventDetectionError
from event_detection.presenters.report_presenter import present_exception, present_success
from event_detection.services.run_config import RunConfig, load_run_config
from event_detection.storage.report_storage import write_report
from event_detection.storage.run_storage import RunStorage

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunContext:
    config: RunConfig
    seed: int
    deterministic: bool
    threads: int
    out_dir: Path


def build_context(command: str, config_path: str | None = None, seed: int | None = None,
                  out: str | None = None, deterministic: bool = False) -> RunContext:
    """Load the run configuration and fold the shared flags into it.

    --seed overrides the train, scene and labeling seeds; deterministic runs
    use a single worker. Otherwise EVDET_THREADS caps the worker count.
    """
    config = load_run_config(config_path)
    deterministic = deterministic or settings.EVDET_DETERMINISTIC
    threads = 1 if deterministic else settings.EVDET_THREADS
    overrides = {'train': {'workers': threads}}
    if seed is not None:
        overrides['train']['seed'] = seed
        overrides['scene'] = {'seed': seed}
        overrides['labeling'] = {'seed': seed}
    config = config.with_overrides(**overrides)
    if out is None:
        out_dir = Path(settings.EVDET_RUNS_DIR) / f'{command}-{timezone.now().strftime("%Y%m%dT%H%M%S%f")}'
    else:
        out_dir = Path(out)
    return RunContext(config, config.train.seed, deterministic, threads, out_dir)


class PipelineInteractor:
    """Subclasses set `command` and implement execute(context, **options) -> result dict."""

    command = ''

    def __init__(self, run_storage: RunStorage):
        self.run_storage = run_storage

    def execute(self, context: RunContext, **options) -> dict:
        raise NotImplementedError

    def run(self, context: RunContext, options: dict) -> dict:
        run = self.run_storage.create_run(
            self.command, context.config.model_dump(mode='json'), options, context.seed, context.deterministic,
            str(context.out_dir),
        )
        return self.execute_run(run, context, options)

    def execute_run(self, run, context: RunContext, options: dict) -> dict:
        self.run_storage.start(run)
        context.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            result = self.execute(context, **options)
        except (EventDetectionError, FileNotFoundError) as exc:
            logger.warning('%s failed: %s', self.command, exc)
            payload = present_exception(exc)
            self.run_storage.fail(run, payload['error'], payload['message'])
            return payload
        except Exception as exc:
            logger.exception('%s failed unexpectedly', self.command)
            payload = present_exception(exc)
            self.run_storage.fail(run, payload['error'], str(exc))
            return payload
        self.run_storage.complete(run, result)
        payload = present_success(
            self.command, result, context.config.model_dump(mode='json'), context.seed, context.deterministic,
            context.threads, run_id=run.id if run is not None else None,
        )
        payload['report_path'] = str(write_report(payload, context.out_dir))
        return payload
