import json
import tempfile
import uuid
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from django.test.utils import override_settings

from event_detection.exceptions import ConfigError
from event_detection.interactors.pipeline_interactor import build_context
from event_detection.models import PipelineRun
from event_detection.services.ablation import AblationResult
from event_detection.services.boxes import Box, BoxFrame
from event_detection.services.events_core import slice_by_time
from event_detection.services.run_config import load_run_config, load_run_config_dict
from event_detection.storage.box_storage import read_box_frames, write_box_frames
from event_detection.storage.event_storage import read_stream
from event_detection.storage.report_storage import REPORT_FILE
from event_detection.storage.run_storage import RunStorage
from event_detection.tasks import run_training_pipeline

SMALL_SCENE = {
    'width': 128, 'height': 128, 'num_objects': 2, 'motion': 'linear', 'size_range': [64.0, 80.0],
    'duration_us': 1_000_000, 'render_step_us': 2_000,
}


def last_json_line(stream: StringIO) -> dict:
    return json.loads(stream.getvalue().strip().splitlines()[-1])


class RunConfigTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        config = load_run_config()
        self.assertEqual(config.train.delta_t_us, 50_000)
        self.assertEqual(config.inference.delta_t_us, 50_000)
        self.assertEqual(config.repr.kind, 'event_volume')
        self.assertEqual(config.network.in_channels, 10)

    def test_network_follows_representation(self):
        config = load_run_config_dict({'network_preset': 'toy', 'repr': {'kind': 'histogram'},
                                       'train': {'delta_t_us': 25_000}})
        self.assertEqual(config.network.in_channels, 2)
        self.assertEqual(config.network.kf, 1)
        self.assertEqual(config.inference.delta_t_us, 25_000)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config_dict({'train': {'learning_rate': 0.1}})
        self.assertIn('train', str(ctx.exception))
        self.assertTrue(ctx.exception.errors)

    def test_bad_files(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.dir / 'missing.json')
        broken = self.dir / 'broken.json'
        broken.write_text('{"train": ', encoding='utf-8')
        with self.assertRaises(ConfigError):
            load_run_config(broken)
        listing = self.dir / 'list.json'
        listing.write_text('[]', encoding='utf-8')
        with self.assertRaises(ConfigError):
            load_run_config(listing)

    @override_settings(EVDET_THREADS=4, EVDET_DETERMINISTIC=False)
    def test_context_flags(self):
        context = build_context('train', seed=9, out=str(self.dir))
        self.assertEqual(context.seed, 9)
        self.assertEqual(context.config.scene.seed, 9)
        self.assertEqual(context.config.labeling.seed, 9)
        self.assertEqual(context.threads, 4)
        self.assertEqual(context.config.train.workers, 4)
        deterministic = build_context('train', out=str(self.dir), deterministic=True)
        self.assertEqual(deterministic.threads, 1)
        self.assertEqual(deterministic.config.train.workers, 1)

    @override_settings(EVDET_DETERMINISTIC=True)
    def test_deterministic_setting(self):
        self.assertTrue(build_context('eval', out=str(self.dir)).deterministic)


class RunStorageTests(TestCase):
    def setUp(self):
        self.storage = RunStorage()

    def test_lifecycle(self):
        run = self.storage.create_run('eval', {'eval': {}}, {'labels': 'x'}, 3, True, '/tmp/out')
        self.assertEqual(run.status, PipelineRun.STATUS_PENDING)
        self.storage.start(run)
        self.assertIsNotNone(run.started_at)
        self.storage.complete(run, {'map': 0.5})
        run.refresh_from_db()
        self.assertEqual(run.status, PipelineRun.STATUS_COMPLETED)
        self.assertEqual(run.metrics, {'map': 0.5})
        self.assertIsNotNone(run.completed_at)

    def test_failure(self):
        run = self.storage.create_run('train', {}, {}, 0, False, '')
        self.storage.fail(run, 'TRAINING_ERROR', 'diverged')
        run.refresh_from_db()
        self.assertEqual(run.status, PipelineRun.STATUS_FAILED)
        self.assertEqual(run.error_code, 'TRAINING_ERROR')

    def test_missing_run_is_a_no_op(self):
        self.storage.start(None)
        self.storage.complete(None, {})
        self.storage.fail(None, 'X', 'y')
        self.assertIsNone(self.storage.get_run(uuid.uuid4()))


class PipelineCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = self.dir / 'config.json'
        self.config.write_text(json.dumps({'network_preset': 'toy', 'scene': SMALL_SCENE}), encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args):
        stdout, stderr = StringIO(), StringIO()
        call_command(*args, stdout=stdout, stderr=stderr)
        return stdout, stderr

    def synth(self, name='data', seed=4, *extra):
        out = self.dir / name
        stdout, _ = self.call('synth', '--config', str(self.config), '--seed', str(seed), '--out', str(out), *extra)
        return out, last_json_line(stdout)

    def test_synth_writes_scenes_and_records_run(self):
        out, result = self.synth('data', 4, '--count', '2')
        self.assertEqual([s['seed'] for s in result['sequences']], [4, 5])
        for name in ('scene_000', 'scene_001'):
            self.assertTrue((out / f'{name}.evt').exists())
            self.assertTrue((out / f'{name}.boxes.jsonl').exists())
            self.assertTrue((out / f'{name}.meta.json').exists())
        report = json.loads((out / REPORT_FILE).read_text(encoding='utf-8'))
        self.assertEqual(report['seed'], 4)
        self.assertEqual(report['config']['scene']['seed'], 4)
        run = PipelineRun.objects.get(command='synth')
        self.assertEqual(run.status, PipelineRun.STATUS_COMPLETED)
        self.assertEqual(str(run.id), report['run_id'])

    def test_synth_is_reproducible(self):
        first, _ = self.synth('first', 7)
        second, _ = self.synth('second', 7)
        self.assertEqual((first / 'scene_000.evt').read_bytes(), (second / 'scene_000.evt').read_bytes())

    def test_synth_with_frame_camera(self):
        out, result = self.synth('frames', 2, '--frames', '--offset-us', '5000')
        self.assertEqual(result['offset_us'], 5000)
        self.assertTrue(any((out / 'frames' / 'scene_000').iterdir()))
        self.assertTrue((out / 'frame_labels' / 'scene_000.boxes.jsonl').exists())

    def test_eval_of_labels_against_themselves(self):
        data, _ = self.synth()
        labels = str(data / 'scene_000.boxes.jsonl')
        stdout, _ = self.call('eval', labels, labels, '--out', str(self.dir / 'eval'))
        result = last_json_line(stdout)
        self.assertAlmostEqual(result['mAP'], 1.0)
        self.assertTrue((self.dir / 'eval' / 'per_class_ap.csv').exists())

    def test_step_without_detections_counts_as_missed(self):
        config = self.dir / 'no_warmup.json'
        config.write_text(json.dumps({'eval': {'warmup_us': 0}}), encoding='utf-8')
        labels = write_box_frames([BoxFrame(t, (Box(10, 10, 20, 20, 0, t=t, track_id=1),))
                                   for t in (50_000, 100_000)], self.dir / 'labels.boxes.jsonl')
        detections = write_box_frames([BoxFrame(50_000, (Box(10, 10, 20, 20, 0, t=50_000, confidence=0.9),)),
                                       BoxFrame(100_000)], self.dir / 'detections.boxes.jsonl')
        self.assertEqual(len(read_box_frames(detections)), 1)
        stdout, _ = self.call('eval', str(detections), str(labels), '--config', str(config),
                              '--out', str(self.dir / 'eval'))
        result = last_json_line(stdout)
        self.assertEqual(result['num_timestamps'], 2)
        self.assertEqual(result['num_ground_truth'], 2)
        self.assertLess(result['mAP'], 0.6)
        stdout, _ = self.call('track_iou', str(detections), str(labels), '--bins', '2', '--config', str(config),
                              '--out', str(self.dir / 'curve'))
        self.assertAlmostEqual(last_json_line(stdout)['mean_iou'], 0.5)

    def test_stats(self):
        data, synth_result = self.synth()
        stdout, _ = self.call('stats', str(data / 'scene_000.evt'), '--out', str(self.dir / 'stats'))
        result = last_json_line(stdout)
        self.assertEqual(result['stream']['event_count'], synth_result['sequences'][0]['events'])
        self.assertEqual(result['stream']['width'], 128)

    def test_build_repr(self):
        data, _ = self.synth()
        stdout, _ = self.call('build_repr', str(data / 'scene_000.evt'), '--repr', 'histogram', '--delta-t', '100000',
                              '--out', str(self.dir / 'repr'))
        result = last_json_line(stdout)
        self.assertEqual(result['shape'], [2, 128, 128])
        self.assertEqual(len(list((self.dir / 'repr' / 'repr').iterdir())), result['slices'])

    def test_train_then_detect(self):
        data, _ = self.synth()
        config = self.dir / 'train.json'
        config.write_text(json.dumps({
            'network_preset': 'toy', 'network': {'ff_channels': [8], 'rnn_channels': [8], 'head_channels': 8},
            'repr': {'kind': 'histogram'}, 'train': {'epochs': 1, 'batch_size': 1, 'tbptt_steps': 5},
            'scene': SMALL_SCENE,
        }), encoding='utf-8')
        stdout, _ = self.call('train', str(data), '--config', str(config), '--out', str(self.dir / 'train'))
        trained = last_json_line(stdout)
        self.assertEqual(trained['epochs'], 1)
        self.assertTrue((self.dir / 'train' / 'metrics.jsonl').exists())
        self.assertTrue((self.dir / 'train' / 'model_card.json').exists())

        stdout, _ = self.call('detect', str(data / 'scene_000.evt'), trained['last_checkpoint'],
                              '--out', str(self.dir / 'detect'))
        detected = last_json_line(stdout)
        self.assertEqual(detected['repr_kind'], 'histogram')
        self.assertEqual(detected['steps'], len(slice_by_time(read_stream(data / 'scene_000.evt'), 50_000)))
        self.assertTrue((self.dir / 'detect' / 'detections.boxes.jsonl').exists())

    def test_missing_input_fails_with_error_json(self):
        stderr = StringIO()
        with self.assertRaises(CommandError):
            call_command('eval', str(self.dir / 'nope.jsonl'), str(self.dir / 'nope.jsonl'),
                         '--out', str(self.dir / 'eval'), stdout=StringIO(), stderr=stderr)
        payload = json.loads(stderr.getvalue())
        self.assertFalse(payload['success'])
        self.assertEqual(PipelineRun.objects.get(command='eval').status, PipelineRun.STATUS_FAILED)

    def test_bad_config_fails_before_running(self):
        bad = self.dir / 'bad.json'
        bad.write_text(json.dumps({'train': {'epochs': 0}}), encoding='utf-8')
        stderr = StringIO()
        with self.assertRaises(CommandError):
            call_command('stats', '--benchmark', '--config', str(bad), stdout=StringIO(), stderr=stderr)
        self.assertEqual(json.loads(stderr.getvalue())['error'], 'CONFIG_ERROR')
        self.assertFalse(PipelineRun.objects.exists())

    def test_stats_needs_input(self):
        with self.assertRaises(CommandError):
            call_command('stats', '--out', str(self.dir / 'stats'), stdout=StringIO(), stderr=StringIO())

    @patch('event_detection.interactors.ablation_interactor.run_ablation')
    def test_ablate_conditions(self, mock_run_ablation):
        data, _ = self.synth()
        row = {'condition': 'baseline', 'seed': 4, 'map': 0.5, 'track_iou_mean': 0.4, 'retention_rate': 1.0}
        mock_run_ablation.return_value = AblationResult([row], [row], {'baseline': np.ones(4)})
        stdout, _ = self.call('ablate', str(data), str(data), '--no-memory', '--seed', '4', '--config',
                              str(self.config), '--out', str(self.dir / 'ablate'))
        conditions = mock_run_ablation.call_args.args[1]
        self.assertEqual([c.name for c in conditions], ['baseline', 'no_memory'])
        self.assertEqual(mock_run_ablation.call_args.args[2], [4])
        result = last_json_line(stdout)
        self.assertTrue(result['condition_configs']['no_memory']['network']['force_zero_state'])
        self.assertTrue((self.dir / 'ablate' / 'track_iou_baseline.csv').exists())

    @patch('event_detection.tasks.run_training_pipeline.delay')
    def test_train_async_queues_a_pending_run(self, mock_delay):
        data, _ = self.synth()
        stdout, _ = self.call('train', str(data), '--async', '--config', str(self.config),
                              '--out', str(self.dir / 'train'))
        run = PipelineRun.objects.get(command='train')
        self.assertEqual(run.status, PipelineRun.STATUS_PENDING)
        mock_delay.assert_called_once_with(str(run.id))
        self.assertEqual(last_json_line(stdout)['run_id'], str(run.id))


class TrainingTaskTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.run = RunStorage().create_run('train', {'network_preset': 'toy'}, {'data': 'x'}, 1, True,
                                           self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_missing_run(self):
        self.assertEqual(run_training_pipeline(str(uuid.uuid4())), {'status': 'MISSING'})

    def test_finished_run_is_not_repeated(self):
        self.run.status = PipelineRun.STATUS_COMPLETED
        self.run.save()
        self.assertEqual(run_training_pipeline(str(self.run.id)), {'status': PipelineRun.STATUS_COMPLETED})

    @patch('event_detection.tasks.TrainInteractor.execute_run')
    def test_runs_the_interactor(self, mock_execute):
        mock_execute.return_value = {'success': True, 'report_path': 'report.json'}
        result = run_training_pipeline(str(self.run.id))
        self.assertEqual(result['status'], PipelineRun.STATUS_COMPLETED)
        context = mock_execute.call_args.args[1]
        self.assertTrue(context.deterministic)
        self.assertEqual(context.threads, 1)
        self.assertEqual(mock_execute.call_args.args[2], {'data': 'x'})

    @patch('event_detection.tasks.TrainInteractor.execute_run', side_effect=RuntimeError('boom'))
    def test_unexpected_failure_is_recorded(self, _):
        with self.assertRaises(RuntimeError):
            run_training_pipeline(str(self.run.id))
        self.run.refresh_from_db()
        self.assertEqual(self.run.status, PipelineRun.STATUS_FAILED)
        self.assertEqual(self.run.error_code, 'TRAINING_PIPELINE_ERROR')
