import logging

from event_detection.exceptions import ArgumentError
from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.ablation import TestSequence, ablation_conditions, condition_config, run_ablation
from event_detection.storage.dataset_storage import list_sequences, read_dataset, read_sequence, read_stops
from event_detection.storage.report_storage import write_curve_csv, write_table_csv

logger = logging.getLogger(__name__)

RUNS_FILE = 'ablation_runs.csv'
SUMMARY_FILE = 'ablation_summary.csv'


class AblationInteractor(PipelineInteractor):
    """Baseline plus the requested conditions, each trained once per seed; curves and tables as CSV."""

    command = 'ablate'

    def execute(self, context: RunContext, data: str, test: str, no_memory: bool = False,
                no_consistency: bool = False, repr_kinds: list[str] | None = None, seeds: int = 1,
                bins: int = 100) -> dict:
        if seeds < 1:
            raise ArgumentError(f'--seeds must be >= 1, got {seeds}.')

        train_set = read_dataset(data)
        test_set = [TestSequence(read_sequence(test, name), read_stops(test, name)) for name in list_sequences(test)]
        if not test_set:
            raise ArgumentError(f'No test sequences in {test}.')
        conditions = ablation_conditions(no_memory, no_consistency, repr_kinds or [])
        seed_list = [context.seed + offset for offset in range(seeds)]
        result = run_ablation(context.config, conditions, seed_list, train_set, test_set, context.out_dir, bins)
        write_table_csv(result.rows, context.out_dir / RUNS_FILE)
        write_table_csv(result.summary, context.out_dir / SUMMARY_FILE)
        curve_paths = {}
        for name, curve in result.curves.items():
            curve_paths[name] = str(write_curve_csv(curve, context.out_dir / f'track_iou_{name}.csv'))
        return {
            'conditions': [condition.as_dict() for condition in conditions],
            'condition_configs': {
                condition.name: condition_config(context.config, condition, seed_list[0]).model_dump(mode='json')
                for condition in conditions
            },
            'seeds': seed_list,
            'runs': result.rows,
            'summary': result.summary,
            'curves': curve_paths,
        }
