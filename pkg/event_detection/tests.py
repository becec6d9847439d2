import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from event_detection.exceptions import ArgumentError, DecodeError
from event_detection.services.boxes import Box, BoxFrame
from event_detection.services.events_core import (
    EVENT_DTYPE,
    EventStream,
    iter_slices_by_time,
    make_events,
    slice_by_count,
    slice_by_time,
    stream_stats,
)
from event_detection.storage.box_storage import read_box_frames, read_boxes, write_box_frames
from event_detection.storage.event_storage import (
    HEADER_SIZE,
    RECORD_SIZE,
    iter_chunks,
    read_header,
    read_stream,
    write_stream,
)
from event_detection.storage.tensor_storage import (
    load_checkpoint,
    read_npyish,
    resolve_checkpoint_prefix,
    save_checkpoint,
    write_npyish,
)


def random_stream(seed=0, count=1000, width=64, height=48, duration=500_000):
    rng = np.random.default_rng(seed)
    events = make_events(
        rng.integers(0, width, count),
        rng.integers(0, height, count),
        rng.integers(0, 2, count),
        np.sort(rng.integers(0, duration, count)),
    )
    return EventStream(width, height, events)


class EventStreamTests(SimpleTestCase):
    def test_rejects_out_of_bounds_coordinates(self):
        with self.assertRaises(ArgumentError):
            EventStream(10, 10, make_events([10], [0], [1], [0]))

    def test_rejects_non_monotone_timestamps(self):
        with self.assertRaises(ArgumentError):
            EventStream(10, 10, make_events([0, 1], [0, 1], [1, 0], [5, 4]))

    def test_from_unsorted_sorts_stably(self):
        events = make_events([1, 2, 3], [0, 0, 0], [1, 1, 1], [20, 10, 10])
        stream = EventStream.from_unsorted(4, 1, events)
        self.assertEqual(stream.events['t'].tolist(), [10, 10, 20])
        self.assertEqual(stream.events['x'].tolist(), [2, 3, 1])

    def test_events_are_read_only(self):
        stream = random_stream(count=10)
        with self.assertRaises(ValueError):
            stream.events['x'][0] = 1

    def test_stats_of_empty_stream(self):
        stats = stream_stats(EventStream.empty(8, 4))
        self.assertEqual(stats['event_count'], 0)
        self.assertEqual((stats['width'], stats['height']), (8, 4))

    def test_stats_counts_active_pixels(self):
        stream = EventStream(4, 1, make_events([0, 0, 1, 1], [0, 0, 0, 0], [1, 0, 1, 1], [0, 1, 2, 1_000_000]))
        stats = stream_stats(stream)
        self.assertEqual(stats['event_count'], 4)
        self.assertEqual(stats['duration_us'], 1_000_000)
        self.assertAlmostEqual(stats['active_pixel_fraction'], 0.5)
        self.assertAlmostEqual(stats['on_fraction'], 0.75)


class SliceByTimeTests(SimpleTestCase):
    def test_empty_stream_gives_no_slices(self):
        self.assertEqual(slice_by_time(EventStream.empty(4, 4), 50_000), [])

    def test_half_open_boundary(self):
        stream = EventStream(4, 4, make_events([0, 1, 2], [0, 0, 0], [1, 1, 1], [0, 49_999, 50_000]))
        slices = slice_by_time(stream, 50_000)
        self.assertEqual(len(slices), 2)
        self.assertEqual(len(slices[0]), 2)
        self.assertEqual(len(slices[1]), 1)
        self.assertEqual((slices[1].t_start, slices[1].t_end), (50_000, 100_000))

    def test_rejects_non_positive_delta(self):
        with self.assertRaises(ArgumentError):
            slice_by_time(random_stream(count=5), 0)

    def test_partition_is_exhaustive_and_ordered(self):
        stream = random_stream(seed=3)
        slices = slice_by_time(stream, 30_000)
        joined = np.concatenate([s.events for s in slices])
        np.testing.assert_array_equal(joined, stream.events)
        for k, time_slice in enumerate(slices):
            self.assertEqual(time_slice.t_start, k * 30_000)
            if len(time_slice):
                self.assertTrue(np.all(time_slice.events['t'] >= time_slice.t_start))
                self.assertTrue(np.all(time_slice.events['t'] < time_slice.t_end))
        self.assertGreater(slices[-1].t_end, stream.t_end)

    def test_gaps_produce_empty_slices(self):
        stream = EventStream(4, 4, make_events([0, 1], [0, 0], [1, 1], [10, 260_000]))
        slices = slice_by_time(stream, 50_000)
        self.assertEqual([len(s) for s in slices], [1, 0, 0, 0, 0, 1])

    def test_t_end_pads_with_empty_slices(self):
        stream = EventStream(4, 4, make_events([0], [0], [1], [10]))
        slices = slice_by_time(stream, 50_000, t_end=200_000)
        self.assertEqual(len(slices), 5)
        self.assertEqual(slices[-1].t_start, 200_000)

    def test_chunked_iteration_matches_materialised_slicing(self):
        stream = random_stream(seed=5, count=2000)
        chunks = [stream.events[i:i + 137] for i in range(0, len(stream), 137)]
        streamed = list(iter_slices_by_time(chunks, 20_000, stream.width, stream.height))
        direct = slice_by_time(stream, 20_000)
        self.assertEqual(len(streamed), len(direct))
        for a, b in zip(streamed, direct):
            self.assertEqual((a.t_start, a.t_end), (b.t_start, b.t_end))
            np.testing.assert_array_equal(a.events, b.events)


class SliceByCountTests(SimpleTestCase):
    def test_sizes(self):
        stream = random_stream(count=10)
        self.assertEqual([len(s) for s in slice_by_count(stream, 4)], [4, 4, 2])

    def test_single_slice_when_n_exceeds_length(self):
        stream = random_stream(count=10)
        slices = slice_by_count(stream, 50)
        self.assertEqual(len(slices), 1)
        self.assertEqual(slices[0].t_start, int(stream.events['t'][0]))
        self.assertEqual(slices[0].t_end, int(stream.events['t'][-1]) + 1)

    def test_rejects_zero(self):
        with self.assertRaises(ArgumentError):
            slice_by_count(random_stream(count=3), 0)

    def test_order_preserved(self):
        stream = random_stream(seed=9, count=333)
        joined = np.concatenate([s.events for s in slice_by_count(stream, 10)])
        np.testing.assert_array_equal(joined, stream.events)


class EventFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_empty_file(self):
        path = write_stream(EventStream.empty(1280, 720), self.dir / 'empty.evt')
        stream = read_stream(path)
        self.assertEqual(len(stream), 0)
        self.assertEqual(stream.dims, (1280, 720))
        self.assertEqual(path.stat().st_size, HEADER_SIZE)

    def test_random_events_survive_a_write_read_cycle(self):
        stream = random_stream(seed=1, count=10_000, width=1280, height=720)
        stream_back = read_stream(write_stream(stream, self.dir / 'a.evt'))
        np.testing.assert_array_equal(stream_back.events, stream.events)

    def test_rewrite_is_byte_identical(self):
        first = write_stream(random_stream(seed=2), self.dir / 'a.evt')
        second = write_stream(read_stream(first), self.dir / 'b.evt')
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_bad_magic(self):
        path = write_stream(random_stream(count=3), self.dir / 'a.evt')
        raw = bytearray(path.read_bytes())
        raw[:4] = b'NOPE'
        path.write_bytes(bytes(raw))
        with self.assertRaises(DecodeError) as ctx:
            read_stream(path)
        self.assertEqual(ctx.exception.offset, 0)

    def test_out_of_bounds_coordinate_names_offset(self):
        path = write_stream(random_stream(count=5, width=64), self.dir / 'a.evt')
        raw = bytearray(path.read_bytes())
        x_offset = HEADER_SIZE + 3 * RECORD_SIZE + 8
        raw[x_offset:x_offset + 2] = (64).to_bytes(2, 'little')
        path.write_bytes(bytes(raw))
        with self.assertRaises(DecodeError) as ctx:
            read_stream(path)
        self.assertEqual(ctx.exception.offset, HEADER_SIZE + 3 * RECORD_SIZE)

    def test_non_monotone_timestamp(self):
        events = np.zeros(2, dtype=EVENT_DTYPE)
        path = write_stream(EventStream(4, 4, events), self.dir / 'a.evt')
        raw = bytearray(path.read_bytes())
        raw[HEADER_SIZE:HEADER_SIZE + 8] = (7).to_bytes(8, 'little')
        path.write_bytes(bytes(raw))
        with self.assertRaises(DecodeError) as ctx:
            read_stream(path)
        self.assertEqual(ctx.exception.offset, HEADER_SIZE + RECORD_SIZE)

    def test_truncated_payload(self):
        path = write_stream(random_stream(count=5), self.dir / 'a.evt')
        path.write_bytes(path.read_bytes()[:-3])
        with self.assertRaises(DecodeError):
            read_stream(path)

    def test_chunks_concatenate_to_stream(self):
        stream = random_stream(seed=4, count=1000)
        path = write_stream(stream, self.dir / 'a.evt')
        self.assertEqual(read_header(path), (stream.width, stream.height, 1000))
        chunks = list(iter_chunks(path, chunk_events=128))
        self.assertEqual(len(chunks), 8)
        np.testing.assert_array_equal(np.concatenate(chunks), stream.events)


class BoxFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_frames_grouped_by_timestamp(self):
        frames = [
            BoxFrame(0, (Box(1, 2, 30, 40, 0, t=0, track_id=1), Box(5, 5, 10, 10, 2, t=0, track_id=2))),
            BoxFrame(50_000, (Box(3, 2, 30, 40, 0, t=50_000, track_id=1, confidence=0.7),)),
        ]
        path = write_box_frames(frames, self.dir / 'a.boxes.jsonl')
        back = read_box_frames(path)
        self.assertEqual([frame.t for frame in back], [0, 50_000])
        self.assertEqual(back[0].boxes[1].class_id, 2)
        self.assertAlmostEqual(back[1].boxes[0].confidence, 0.7)

    def test_missing_field(self):
        path = self.dir / 'bad.boxes.jsonl'
        path.write_text('{"t": 0, "x": 1, "y": 1, "w": 2, "h": 2, "class_id": 0}\n{"t": 1, "x": 1}\n')
        with self.assertRaises(DecodeError) as ctx:
            read_boxes(path)
        self.assertEqual(ctx.exception.offset, len('{"t": 0, "x": 1, "y": 1, "w": 2, "h": 2, "class_id": 0}\n'))

    def test_invalid_json(self):
        path = self.dir / 'bad.boxes.jsonl'
        path.write_text('not json\n')
        with self.assertRaises(DecodeError):
            read_boxes(path)


class TensorFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_npyish_layout(self):
        values = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
        path = write_npyish(values, self.dir / 'a.npyish')
        raw = path.read_bytes()
        self.assertEqual(np.frombuffer(raw[:12], dtype='<u4').tolist(), [2, 3, 4])
        np.testing.assert_array_equal(read_npyish(path), values)

    def test_npyish_truncated(self):
        path = write_npyish(np.ones((1, 2, 2), dtype=np.float32), self.dir / 'a.npyish')
        path.write_bytes(path.read_bytes()[:-1])
        with self.assertRaises(DecodeError):
            read_npyish(path)

    def test_checkpoint_keeps_names_shapes_and_meta(self):
        tensors = {'a': np.ones((2, 3), dtype=np.float32), 'b': np.array(5.0, dtype=np.float32)}
        manifest = save_checkpoint(self.dir / 'ckpt', tensors, {'epoch': 3})
        self.assertEqual(resolve_checkpoint_prefix(manifest), self.dir / 'ckpt')
        loaded, meta = load_checkpoint(self.dir / 'ckpt')
        self.assertEqual(meta, {'epoch': 3})
        self.assertEqual(loaded['a'].shape, (2, 3))
        self.assertEqual(float(loaded['b']), 5.0)

    def test_missing_checkpoint(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint(self.dir / 'nothing')
