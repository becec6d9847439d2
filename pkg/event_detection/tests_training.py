import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ConfigError, TrainingError
from event_detection.services.boxes import Box, BoxFrame
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.detector.model import build_model
from event_detection.services.events_core import EventStream
from event_detection.services.representations import ReprConfig
from event_detection.services.synthgen import SceneConfig, generate
from event_detection.services.training import (
    METRICS_FILE,
    TrainConfig,
    TrainingSequence,
    build_step_targets,
    load_detector,
    prepare_sequence,
    train,
)
from event_detection.storage.report_storage import read_jsonl
from event_detection.storage.tensor_storage import save_checkpoint

SIZE = 64


def toy_network():
    return NetworkConfig.toy(channels=8, in_channels=2)


def toy_dataset(count=2, durations=None):
    dataset = []
    for seed, duration_us in enumerate(durations or [300_000] * count):
        scene = generate(SceneConfig(width=SIZE, height=SIZE, num_objects=1, motion='linear',
                                     size_range=(24.0, 32.0), speed_range=(60.0, 120.0),
                                     duration_us=duration_us, render_step_us=5_000, seed=seed))
        dataset.append(TrainingSequence(f'scene_{seed}', scene.stream, scene.frames))
    return dataset


def train_config(**overrides):
    values = dict(delta_t_us=50_000, tbptt_steps=3, batch_size=2, epochs=2, lr=1e-3, warmup_us=0,
                  min_diag=0.0, min_side=0.0, seed=5)
    values.update(overrides)
    return TrainConfig(**values)


class TrainConfigTests(SimpleTestCase):
    def test_learning_rate_schedule(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.lr_at(0), 2e-4)
        self.assertAlmostEqual(cfg.lr_at(3), 2e-4 * 0.98 ** 3)

    def test_invalid_values(self):
        with self.assertRaises(ValueError):
            TrainConfig(betas=(0.9, 1.0))
        with self.assertRaises(ValueError):
            TrainConfig(tbptt_steps=0)
        with self.assertRaises(ValueError):
            TrainConfig(learning_rate=0.1)


class PrepareSequenceTests(SimpleTestCase):
    def test_labels_pair_with_slice_ends(self):
        frames = [BoxFrame(50_000, (Box(0, 0, 10, 10, 0),)), BoxFrame(151_000, (Box(0, 0, 10, 10, 0),))]
        sequence = TrainingSequence('s', EventStream.empty(32, 32), frames)
        prepared = prepare_sequence(sequence, train_config(label_tolerance_us=5_000))
        self.assertEqual([s.t_end for s in prepared.slices], [50_000, 100_000, 150_000, 200_000])
        self.assertEqual([label is not None for label in prepared.labels], [True, False, True, False])

    def test_small_boxes_filtered_from_labels(self):
        frames = [BoxFrame(50_000, (Box(0, 0, 10, 10, 0), Box(0, 0, 40, 50, 1)))]
        sequence = TrainingSequence('s', EventStream.empty(64, 64), frames)
        prepared = prepare_sequence(sequence, train_config(min_diag=60.0, min_side=20.0))
        self.assertEqual([box.class_id for box in prepared.labels[0].boxes], [1])


class StepTargetTests(SimpleTestCase):
    def setUp(self):
        self.anchors = np.array([[15.0, 15.0, 10.0, 10.0], [45.0, 45.0, 10.0, 10.0]])
        self.now = BoxFrame(50_000, (Box(10, 10, 10, 10, 1, track_id=4),))
        self.later = BoxFrame(100_000, (Box(12, 10, 10, 10, 1, track_id=4),))

    def test_next_targets_follow_track(self):
        targets = build_step_targets([self.now], [self.later], [50_000], self.anchors, 3, train_config())
        self.assertTrue(targets.active[0])
        np.testing.assert_array_equal(targets.positive[0], [True, False])
        np.testing.assert_array_equal(targets.labels[0], [1, 3])
        self.assertTrue(targets.next_positive[0, 0])
        self.assertGreater(targets.next_deltas[0, 0, 0], 0.0)

    def test_warmup_and_missing_labels_are_inactive(self):
        targets = build_step_targets([self.now, None], [None, None], [50_000, 50_000], self.anchors, 3,
                                     train_config(warmup_us=100_000))
        np.testing.assert_array_equal(targets.active, [False, False])
        self.assertFalse(targets.positive.any())

    def test_lost_track_has_no_next_target(self):
        other = BoxFrame(100_000, (Box(12, 10, 10, 10, 1, track_id=9),))
        targets = build_step_targets([self.now], [other], [50_000], self.anchors, 3, train_config())
        self.assertTrue(targets.positive[0, 0])
        self.assertFalse(targets.next_positive.any())


class TrainLoopTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)
        self.repr_cfg = ReprConfig(kind='histogram')
        self.dataset = toy_dataset()

    def tearDown(self):
        self.tmp.cleanup()

    def test_empty_dataset(self):
        with self.assertRaises(TrainingError):
            train(build_model(toy_network()), [], train_config(), self.repr_cfg, self.out)

    def test_metrics_log_and_checkpoints(self):
        result = train(build_model(toy_network(), seed=1), self.dataset, train_config(), self.repr_cfg, self.out)
        self.assertEqual(result.state.epoch, 2)
        self.assertEqual(len(result.history), 2)
        self.assertEqual(result.history[1]['lr'], 1e-3 * 0.98)
        records = read_jsonl(self.out / METRICS_FILE)
        steps = [r for r in records if 'step' in r]
        epochs = [r for r in records if r.get('event') == 'epoch_end']
        self.assertEqual(len(epochs), 2)
        self.assertEqual(len(steps), result.state.global_step)
        self.assertTrue(all({'loss_c', 'loss_r', 'loss_t', 'loss'} <= set(r) for r in steps))
        self.assertTrue(Path(str(result.last_checkpoint) + '.bin').exists())
        self.assertIsNotNone(result.best_checkpoint)

    def test_resume_matches_uninterrupted_run(self):
        straight = build_model(toy_network(), seed=1)
        full = train(straight, self.dataset, train_config(epochs=2), self.repr_cfg, self.out / 'full')

        first_half = train(build_model(toy_network(), seed=1), self.dataset, train_config(epochs=1),
                           self.repr_cfg, self.out / 'half')
        resumed_model = build_model(toy_network(), seed=42)
        resumed = train(resumed_model, self.dataset, train_config(epochs=2), self.repr_cfg, self.out / 'resumed',
                        resume_from=first_half.last_checkpoint)

        self.assertEqual(resumed.state.global_step, full.state.global_step)
        self.assertEqual(resumed.history[-1]['train_loss'], full.history[-1]['train_loss'])
        expected = straight.state_dict()
        for name, value in resumed_model.state_dict().items():
            np.testing.assert_array_equal(value, expected[name], err_msg=name)

    def test_warmup_excludes_all_steps(self):
        result = train(build_model(toy_network()), self.dataset, train_config(epochs=1, warmup_us=10_000_000),
                       self.repr_cfg, self.out)
        self.assertEqual(result.state.global_step, 0)
        self.assertIsNone(result.best_checkpoint)

    def test_longer_sequence_trains_to_its_end(self):
        dataset = toy_dataset(durations=[150_000, 450_000])
        cfg = train_config(epochs=1)
        lengths = [len(prepare_sequence(sequence, cfg)) for sequence in dataset]
        self.assertLess(lengths[0], lengths[1])
        result = train(build_model(toy_network(), seed=1), dataset, cfg, self.repr_cfg, self.out)
        self.assertEqual(result.state.global_step, -(-lengths[1] // cfg.tbptt_steps))
        steps = [r for r in read_jsonl(self.out / METRICS_FILE) if 'step' in r]
        self.assertEqual(len(steps), result.state.global_step)
        self.assertTrue(all(np.isfinite(r['loss']) for r in steps))


class LoadDetectorTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_from_training_checkpoint(self):
        model = build_model(toy_network(), seed=3)
        result = train(model, toy_dataset(1), train_config(epochs=1, batch_size=1), ReprConfig(kind='histogram'),
                       self.out)
        loaded, repr_cfg = load_detector(str(result.last_checkpoint) + '.json')
        self.assertEqual(repr_cfg.kind, 'histogram')
        self.assertFalse(loaded.training)
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[name], value)

    def test_missing_metadata(self):
        prefix = save_checkpoint(self.out / 'bare', {'w': np.zeros(2)}, {})
        with self.assertRaises(ConfigError):
            load_detector(prefix)
