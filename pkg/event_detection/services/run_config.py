"""One JSON document configuring every pipeline stage."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from event_detection.exceptions import ConfigError
from event_detection.services.detector.config import NetworkConfig
from event_detection.services.evaluation import EvalConfig
from event_detection.services.inference import InferenceConfig
from event_detection.services.representations import ReprConfig, channel_count
from event_detection.services.synthgen import SceneConfig
from event_detection.services.training import TrainConfig
from labeling.services.config import LabelingConfig

logger = logging.getLogger(__name__)

NETWORK_PRESETS = {
    'full': NetworkConfig,
    'desk': NetworkConfig.desk,
    'toy': NetworkConfig.toy,
}


class RunConfig(BaseModel):
    """Sections default to the documented values; network starts from a preset.

    network.in_channels follows the representation unless given explicitly, and
    inference.delta_t_us follows train.delta_t_us likewise.
    """

    model_config = ConfigDict(frozen=True, extra='forbid')

    network_preset: Literal['full', 'desk', 'toy'] = 'full'
    train: TrainConfig = TrainConfig()
    network: NetworkConfig = NetworkConfig()
    repr: ReprConfig = ReprConfig()
    eval: EvalConfig = EvalConfig()
    scene: SceneConfig = SceneConfig()
    labeling: LabelingConfig = LabelingConfig()
    inference: InferenceConfig = InferenceConfig()

    @model_validator(mode='before')
    @classmethod
    def resolve_network(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        preset = data.get('network_preset', 'full')
        network = data.get('network')
        if isinstance(network, NetworkConfig):
            return data
        overrides = dict(network or {})
        if 'in_channels' not in overrides:
            repr_cfg = data.get('repr') or {}
            if not isinstance(repr_cfg, ReprConfig):
                try:
                    repr_cfg = ReprConfig(**repr_cfg)
                except (ValidationError, TypeError) as exc:
                    raise ValueError(f'repr: {exc}') from exc
            overrides['in_channels'] = channel_count(repr_cfg)
        factory = NETWORK_PRESETS.get(preset)
        if factory is not None:
            try:
                data['network'] = factory(**overrides)
            except ValidationError as exc:
                raise ValueError(f'network: {exc.errors(include_url=False)[0]["msg"]}') from exc
        inference = data.get('inference')
        if not isinstance(inference, InferenceConfig):
            inference = dict(inference or {})
            train = data.get('train') or {}
            delta = train.delta_t_us if isinstance(train, TrainConfig) else train.get('delta_t_us')
            if delta is not None:
                inference.setdefault('delta_t_us', delta)
            data['inference'] = inference
        return data

    def with_overrides(self, **sections) -> 'RunConfig':
        """Copy with some fields of some sections replaced, re-validated."""
        data = self.model_dump(mode='json')
        for section, values in sections.items():
            if isinstance(data.get(section), dict):
                data[section].update(values)
            else:
                data[section] = values
        return load_run_config_dict(data)


def load_run_config_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        errors = exc.errors(include_url=False)
        first = errors[0]
        location = '.'.join(str(part) for part in first['loc'])
        raise ConfigError(f'Invalid run configuration at {location or "<root>"}: {first["msg"]}',
                          errors=[{'loc': list(e['loc']), 'msg': e['msg'], 'type': e['type']} for e in errors]) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'Invalid run configuration: {exc}') from exc


def load_run_config(path: str | Path | None = None) -> RunConfig:
    """Defaults when path is None; otherwise the validated JSON document at path."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f'Configuration file {path} does not exist.')
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise ConfigError(f'Configuration file {path} is not valid JSON: {exc.msg} at line {exc.lineno}.') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'Configuration file {path} must hold a JSON object.')
    config = load_run_config_dict(data)
    logger.debug('Loaded run configuration from %s', path)
    return config
