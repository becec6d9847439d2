import logging
import time

import numpy as np

from event_detection.exceptions import ArgumentError
from event_detection.interactors.pipeline_interactor import PipelineInteractor, RunContext
from event_detection.services.events_core import EventStream, TimeSlice, make_events, stream_stats
from event_detection.services.representations import ReprConfig, build_event_volume
from event_detection.storage.event_storage import read_stream

logger = logging.getLogger(__name__)

BENCHMARK_WIDTH = 1280
BENCHMARK_HEIGHT = 720
BENCHMARK_SLICE_US = 50_000
BENCHMARK_TARGET_MS = 200.0


def benchmark_event_volume(num_events: int = 1_000_000, repeats: int = 3, seed: int = 0) -> dict:
    """Best-of-repeats wall time of one Event Volume over num_events uniform events at 1280x720."""
    rng = np.random.default_rng(seed)
    events = make_events(
        rng.integers(0, BENCHMARK_WIDTH, num_events),
        rng.integers(0, BENCHMARK_HEIGHT, num_events),
        rng.integers(0, 2, num_events),
        np.sort(rng.integers(0, BENCHMARK_SLICE_US, num_events)),
    )
    time_slice = TimeSlice(0, BENCHMARK_SLICE_US, events, BENCHMARK_WIDTH, BENCHMARK_HEIGHT)
    cfg = ReprConfig(kind='event_volume')
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        build_event_volume(time_slice, cfg)
        timings.append((time.perf_counter() - started) * 1000.0)
    best = min(timings)
    if best > BENCHMARK_TARGET_MS:
        logger.warning('Event Volume took %.1f ms for %d events, above the %.0f ms target', best, num_events,
                       BENCHMARK_TARGET_MS)
    return {
        'events': num_events,
        'width': BENCHMARK_WIDTH,
        'height': BENCHMARK_HEIGHT,
        'bins': cfg.bins,
        'best_ms': best,
        'timings_ms': timings,
        'target_ms': BENCHMARK_TARGET_MS,
        'within_target': best <= BENCHMARK_TARGET_MS,
    }


class StatsInteractor(PipelineInteractor):
    command = 'stats'

    def execute(self, context: RunContext, events: str | None = None, benchmark: bool = False,
                benchmark_events: int = 1_000_000) -> dict:
        if events is None and not benchmark:
            raise ArgumentError('Give an event file, --benchmark, or both.')
        result = {}
        if events is not None:
            stream: EventStream = read_stream(events)
            result['stream'] = stream_stats(stream)
        if benchmark:
            result['benchmark'] = benchmark_event_volume(benchmark_events, seed=context.seed)
        return result
