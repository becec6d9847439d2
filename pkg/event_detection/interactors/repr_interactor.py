import logging

from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.events_core import slice_by_time
from event_detection.services.representations import ReprConfig, build_representation
from event_detection.storage.event_storage import read_stream
from event_detection.storage.tensor_storage import write_npyish

logger = logging.getLogger(__name__)

REPR_DIR = 'repr'


class BuildReprInteractor(PipelineInteractor):
    command = 'build_repr'

    def execute(self, context: RunContext, events: str, delta_t: int | None = None, kind: str | None = None) -> dict:
        repr_cfg = context.config.repr
        if kind is not None:
            repr_cfg = ReprConfig(**{**repr_cfg.model_dump(), 'kind': kind})
        delta_t = delta_t or context.config.train.delta_t_us
        stream = read_stream(events)
        slices = slice_by_time(stream, delta_t)
        shape = None
        for index, time_slice in enumerate(slices):
            tensor = build_representation(time_slice, repr_cfg)
            write_npyish(tensor.values, context.out_dir / REPR_DIR / f'{index:06d}.npyish')
            shape = list(tensor.shape)
        logger.info('Built %d %s tensors from %s', len(slices), repr_cfg.kind, events)
        return {
            'kind': repr_cfg.kind,
            'delta_t_us': delta_t,
            'slices': len(slices),
            'shape': shape,
            'directory': str(context.out_dir / REPR_DIR),
        }
