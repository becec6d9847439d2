import tempfile
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from event_detection.services.ablation import TestSequence, ablation_conditions, run_ablation
from event_detection.services.boxes import project_points
from event_detection.services.run_config import load_run_config_dict
from event_detection.services.synthgen import SceneConfig, generate, misalign_frames
from event_detection.services.training import TrainingSequence
from labeling.services.homography import estimate_homography
from labeling.services.sync import sync_stream_to_frames

TRIALS = 20
SLICE_US = 1e6 / 60


class LabelingAcceptanceTests(SimpleTestCase):
    def test_homography_with_thirty_percent_outliers(self):
        successes = 0
        for trial in range(TRIALS):
            rng = np.random.default_rng(100 + trial)
            matrix = np.array([
                [1.0 + rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-15, 15)],
                [rng.uniform(-0.05, 0.05), 1.0 + rng.uniform(-0.05, 0.05), rng.uniform(-15, 15)],
                [rng.uniform(-5e-5, 5e-5), rng.uniform(-5e-5, 5e-5), 1.0],
            ])
            src = rng.uniform(0, 256, (60, 2))
            dst = project_points(matrix, src) + rng.normal(0, 0.1, (60, 2))
            outliers = rng.choice(60, 18, replace=False)
            dst[outliers] = rng.uniform(0, 256, (18, 2))
            result = estimate_homography(src, dst, ransac_iters=1000, inlier_tol=2.0, seed=trial)
            if result.rmse <= 0.5 and result.inlier_count >= 40:
                successes += 1
        self.assertGreaterEqual(successes / TRIALS, 0.95)

    def test_clock_offset_recovered_within_one_slice(self):
        successes = 0
        for trial in range(TRIALS):
            offset = int(np.random.default_rng(trial).integers(-150_000, 150_000))
            scene = generate(SceneConfig(width=96, height=80, num_objects=2, motion='stop_and_go',
                                         size_range=(24.0, 40.0), speed_range=(80.0, 160.0),
                                         move_range_us=(150_000, 300_000), stop_range_us=(150_000, 300_000),
                                         duration_us=1_500_000, seed=200 + trial))
            frames = misalign_frames(scene, offset, np.eye(3))
            result = sync_stream_to_frames(scene.stream, frames, 60, max_lag_us=300_000)
            if abs(result.offset_us - offset) <= SLICE_US:
                successes += 1
        self.assertGreaterEqual(successes / TRIALS, 0.95)


@skipUnless(settings.EVDET_SLOW_TESTS, 'desk-scale training runs need EVDET_SLOW_TESTS=true')
class DeskAblationAcceptanceTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = load_run_config_dict({
            'network_preset': 'toy',
            'network': {'num_classes': 3},
            'repr': {'kind': 'event_volume'},
            'train': {'epochs': 30, 'batch_size': 4, 'tbptt_steps': 10, 'lr': 1e-3, 'warmup_us': 500_000},
        })
        self.train_set = [self.sequence(seed) for seed in range(16)]
        self.test_set = [self.held_out_sequence(1000 + seed) for seed in range(6)]

    def tearDown(self):
        self.tmp.cleanup()

    def scene(self, seed):
        return generate(SceneConfig(width=256, height=256, motion='stop_and_go', duration_us=4_000_000, seed=seed))

    def sequence(self, seed):
        scene = self.scene(seed)
        return TrainingSequence(f'train_{seed}', scene.stream, scene.frames)

    def held_out_sequence(self, seed):
        scene = self.scene(seed)
        return TestSequence(TrainingSequence(f'test_{seed}', scene.stream, scene.frames), scene.stops)

    def summary(self, conditions, seeds):
        result = run_ablation(self.config, conditions, seeds, self.train_set, self.test_set, self.tmp.name)
        return {row['condition']: row for row in result.summary}

    def test_memory_beats_zero_state(self):
        summary = self.summary(ablation_conditions(no_memory=True), [0])
        self.assertGreaterEqual(summary['baseline']['map'] - summary['no_memory']['map'], 0.05)
        self.assertGreaterEqual(summary['baseline']['retention_rate'], 0.8)

    def test_consistency_loss_raises_track_iou(self):
        summary = self.summary(ablation_conditions(no_consistency=True), [0, 1, 2])
        self.assertGreaterEqual(summary['baseline']['track_iou_mean'], summary['no_consistency']['track_iou_mean'])
