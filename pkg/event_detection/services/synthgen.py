"""Synthetic event scenes: textured objects moving over a static background, with 60 Hz tracked boxes.

Events follow the contrast model: a pixel fires whenever its log intensity has
moved by the threshold since its last event, polarity by sign.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from event_detection.services.boxes import Box, BoxFrame, check_homography, map_box, project_points
from event_detection.services.evaluation import StopInterval
from event_detection.services.events_core import EVENT_DTYPE, EventStream

logger = logging.getLogger(__name__)

NUM_CLASSES = 3
GT_RATE_HZ = 60
LOG_EPS = 1e-3


class SceneConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    width: int = Field(default=256, gt=0)
    height: int = Field(default=256, gt=0)
    num_objects: int = Field(default=3, ge=0)
    class_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    motion: Literal['static', 'linear', 'stop_and_go'] = 'stop_and_go'
    speed_range: tuple[float, float] = (40.0, 120.0)
    size_range: tuple[float, float] = (64.0, 96.0)
    move_range_us: tuple[int, int] = (300_000, 800_000)
    stop_range_us: tuple[int, int] = (500_000, 1_000_000)
    threshold: float = Field(default=0.2, gt=0.0)
    background_amplitude: float = Field(default=0.1, ge=0.0, lt=0.5)
    noise_rate: float = Field(default=0.0, ge=0.0)
    duration_us: int = Field(default=2_000_000, gt=0)
    render_step_us: int = Field(default=1_000, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode='after')
    def ranges_ordered(self):
        for name in ('speed_range', 'size_range', 'move_range_us', 'stop_range_us'):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f'{name} must be a non-negative (low, high) pair')
        if sum(self.class_weights) <= 0 or min(self.class_weights) < 0:
            raise ValueError('class_weights must be non-negative with a positive sum')
        if self.size_range[1] >= min(self.width, self.height):
            raise ValueError('objects must fit on the sensor')
        return self


@dataclass
class SceneObject:
    track_id: int
    class_id: int
    width: int
    height: int
    texture: np.ndarray  # (height, width) intensity, NaN outside the shape
    positions: np.ndarray  # (steps + 1, 2) integer top-left corner per render step


@dataclass
class SyntheticScene:
    cfg: SceneConfig
    stream: EventStream
    frames: list[BoxFrame]
    objects: list[SceneObject]
    stops: list[StopInterval] = field(default_factory=list)
    background: np.ndarray | None = None

    def step_index(self, t: int) -> int:
        steps = self.objects[0].positions.shape[0] - 1 if self.objects else self.cfg.duration_us // self.cfg.render_step_us
        return int(np.clip(round(t / self.cfg.render_step_us), 0, steps))

    def render(self, t: int) -> np.ndarray:
        """Latent intensity image in [0, 1] at time t."""
        return _compose(self.background, self.objects, self.step_index(t))

    def metadata(self) -> dict:
        return {
            'config': self.cfg.model_dump(mode='json'),
            'stops': [vars(stop) for stop in self.stops],
            'tracks': [
                {'track_id': obj.track_id, 'class_id': obj.class_id, 'width': obj.width, 'height': obj.height}
                for obj in self.objects
            ],
            'event_count': len(self.stream),
        }


def gt_timestamps(duration_us: int, rate_hz: int = GT_RATE_HZ) -> list[int]:
    count = int(math.floor(duration_us * rate_hz / 1e6))
    return [int(round(j * 1e6 / rate_hz)) for j in range(count + 1) if round(j * 1e6 / rate_hz) <= duration_us]


def _background(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    base = np.full((cfg.height, cfg.width), 0.5)
    if cfg.background_amplitude == 0:
        return base
    cell = 32
    coarse = rng.uniform(-1.0, 1.0, (cfg.height // cell + 2, cfg.width // cell + 2))
    smooth = ndimage.zoom(coarse, cell, order=1)[:cfg.height, :cfg.width]
    return base + cfg.background_amplitude * smooth


def _object_texture(class_id: int, size: float, rng: np.random.Generator) -> np.ndarray:
    """Blocky random texture; class 0 wide rectangle, class 1 tall rectangle, class 2 ellipse."""
    if class_id == 0:
        width, height = size, size * rng.uniform(0.5, 0.8)
    elif class_id == 1:
        width, height = size * rng.uniform(0.45, 0.6), size
    else:
        width, height = size, size * rng.uniform(0.6, 0.9)
    width, height = int(round(width)), int(round(height))
    block = 8
    coarse = rng.uniform(0.05, 1.0, (height // block + 1, width // block + 1))
    texture = np.kron(coarse, np.ones((block, block)))[:height, :width]
    if class_id == 2:
        yy, xx = np.mgrid[0:height, 0:width]
        inside = ((xx + 0.5 - width / 2) / (width / 2)) ** 2 + ((yy + 0.5 - height / 2) / (height / 2)) ** 2 <= 1.0
        texture = np.where(inside, texture, np.nan)
    return texture


def _trajectory(cfg: SceneConfig, width: int, height: int, track_id: int,
                rng: np.random.Generator) -> tuple[np.ndarray, list[StopInterval]]:
    steps = cfg.duration_us // cfg.render_step_us
    dt = cfg.render_step_us / 1e6
    pos = np.array([rng.uniform(0, cfg.width - width), rng.uniform(0, cfg.height - height)])
    angle = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(*cfg.speed_range) if cfg.motion != 'static' else 0.0
    velocity = speed * np.array([math.cos(angle), math.sin(angle)])
    limits = np.array([cfg.width - width, cfg.height - height], dtype=np.float64)

    moving = np.ones(steps + 1, dtype=bool)
    stops = []
    if cfg.motion == 'static':
        moving[:] = False
    elif cfg.motion == 'stop_and_go':
        t = int(rng.integers(cfg.move_range_us[0], cfg.move_range_us[1] + 1))
        while t < cfg.duration_us:
            stop_len = int(rng.integers(cfg.stop_range_us[0], cfg.stop_range_us[1] + 1))
            t_stop_end = min(t + stop_len, cfg.duration_us)
            moving[t // cfg.render_step_us:t_stop_end // cfg.render_step_us] = False
            stops.append(StopInterval(track_id, t, t_stop_end))
            t = t_stop_end + int(rng.integers(cfg.move_range_us[0], cfg.move_range_us[1] + 1))

    positions = np.empty((steps + 1, 2), dtype=np.int64)
    for k in range(steps + 1):
        positions[k] = np.round(pos)
        if not moving[k]:
            continue
        pos = pos + velocity * dt
        for axis in range(2):
            if pos[axis] < 0:
                pos[axis], velocity[axis] = -pos[axis], -velocity[axis]
            elif pos[axis] > limits[axis]:
                pos[axis], velocity[axis] = 2 * limits[axis] - pos[axis], -velocity[axis]
    return positions, stops


def _compose(background: np.ndarray, objects: list[SceneObject], step: int) -> np.ndarray:
    image = background.copy()
    for obj in objects:
        x, y = obj.positions[step]
        region = image[y:y + obj.height, x:x + obj.width]
        texture = obj.texture[:region.shape[0], :region.shape[1]]
        np.copyto(region, texture, where=~np.isnan(texture))
    return image


def _contrast_events(previous_ref: np.ndarray, log_image: np.ndarray, threshold: float, t_prev: int, t_now: int):
    """Threshold crossings between two render steps, timestamps spread evenly inside the step."""
    diff = log_image - previous_ref
    crossings = np.floor(np.abs(diff) / threshold).astype(np.int64)
    ys, xs = np.nonzero(crossings)
    if ys.size == 0:
        return None
    counts = crossings[ys, xs]
    signs = np.sign(diff[ys, xs])
    previous_ref[ys, xs] += signs * counts * threshold
    repeat_x = np.repeat(xs, counts)
    repeat_y = np.repeat(ys, counts)
    repeat_p = np.repeat((signs > 0).astype(np.uint8), counts)
    order_in_pixel = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    span = t_now - t_prev
    ts = t_prev + ((order_in_pixel + 1) * span) // (np.repeat(counts, counts) + 1)
    events = np.empty(repeat_x.size, dtype=EVENT_DTYPE)
    events['t'], events['x'], events['y'], events['p'] = ts, repeat_x, repeat_y, repeat_p
    return events


def _noise_events(cfg: SceneConfig, rng: np.random.Generator, t_prev: int, t_now: int):
    lam = cfg.noise_rate * cfg.width * cfg.height * (t_now - t_prev) / 1e6
    count = int(rng.poisson(lam)) if lam > 0 else 0
    if count == 0:
        return None
    events = np.empty(count, dtype=EVENT_DTYPE)
    events['t'] = rng.integers(t_prev, t_now, count)
    events['x'] = rng.integers(0, cfg.width, count)
    events['y'] = rng.integers(0, cfg.height, count)
    events['p'] = rng.integers(0, 2, count)
    return events


def generate(cfg: SceneConfig) -> SyntheticScene:
    rng = np.random.default_rng(cfg.seed)
    background = _background(cfg, rng)
    weights = np.asarray(cfg.class_weights, dtype=np.float64)
    objects, stops = [], []
    for track_id in range(cfg.num_objects):
        class_id = int(rng.choice(NUM_CLASSES, p=weights / weights.sum()))
        texture = _object_texture(class_id, rng.uniform(*cfg.size_range), rng)
        height, width = texture.shape
        positions, object_stops = _trajectory(cfg, width, height, track_id, rng)
        objects.append(SceneObject(track_id, class_id, width, height, texture, positions))
        stops.extend(object_stops)

    steps = cfg.duration_us // cfg.render_step_us
    noise_rng = np.random.default_rng([cfg.seed, 1])
    reference = np.log(_compose(background, objects, 0) + LOG_EPS)
    chunks = []
    for k in range(1, steps + 1):
        t_prev, t_now = (k - 1) * cfg.render_step_us, k * cfg.render_step_us
        moved = any((obj.positions[k] != obj.positions[k - 1]).any() for obj in objects)
        if moved:
            events = _contrast_events(reference, np.log(_compose(background, objects, k) + LOG_EPS),
                                      cfg.threshold, t_prev, t_now)
            if events is not None:
                chunks.append(events)
        noise = _noise_events(cfg, noise_rng, t_prev, t_now)
        if noise is not None:
            chunks.append(noise)
    if chunks:
        stream = EventStream.from_unsorted(cfg.width, cfg.height, np.concatenate(chunks))
    else:
        stream = EventStream.empty(cfg.width, cfg.height)

    frames = []
    for t in gt_timestamps(cfg.duration_us) if objects else []:
        step = min(int(round(t / cfg.render_step_us)), steps)
        boxes = tuple(
            Box(float(obj.positions[step][0]), float(obj.positions[step][1]), float(obj.width),
                float(obj.height), obj.class_id, t=t, track_id=obj.track_id)
            for obj in objects
        )
        frames.append(BoxFrame(t, boxes))
    logger.info('Generated scene seed=%d: %d events, %d objects, %d stop intervals', cfg.seed, len(stream),
                len(objects), len(stops))
    return SyntheticScene(cfg, stream, frames, objects, stops, background)


def misalign(scene: SyntheticScene, offset_us: int, homography) -> tuple[EventStream, list[BoxFrame]]:
    """Labels as a frame camera would report them: clock t - offset_us, coordinates through H^-1."""
    inverse = np.linalg.inv(check_homography(homography))
    frames = []
    for frame in scene.frames:
        t = frame.t - offset_us
        boxes = tuple(b for b in (map_box(box, inverse, t) for box in frame.boxes) if b is not None)
        frames.append(BoxFrame(t, boxes))
    return scene.stream, frames


def misalign_frames(scene: SyntheticScene, offset_us: int, homography, rate_hz: int = GT_RATE_HZ,
                    dims: tuple[int, int] | None = None) -> list[tuple[int, np.ndarray]]:
    """Grayscale (timestamp, uint8 image) pairs from the frame camera's clock and viewpoint.

    Frame pixel q shows the latent intensity at event pixel H q, sampled bilinearly.
    """
    matrix = check_homography(homography)
    width, height = dims or (scene.cfg.width, scene.cfg.height)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mapped = project_points(matrix, np.column_stack([xx.ravel(), yy.ravel()]))
    coordinates = np.stack([mapped[:, 1].reshape(height, width), mapped[:, 0].reshape(height, width)])
    frames = []
    for t_frame in gt_timestamps(scene.cfg.duration_us, rate_hz):
        t_event = t_frame + offset_us
        if not 0 <= t_event <= scene.cfg.duration_us:
            continue
        image = ndimage.map_coordinates(scene.render(t_event), coordinates, order=1, mode='nearest')
        frames.append((t_frame, np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)))
    return frames
