"""Named trainable parameters plus non-trainable buffers (BatchNorm running statistics)."""

from __future__ import annotations

import logging

import numpy as np

from event_detection.exceptions import GraphConstructionError, ModelConfigError
from event_detection.services.autodiff.tensor import DiffTensor

logger = logging.getLogger(__name__)

BUFFER_PREFIX = 'buffer/'


class ParameterRegistry:

    def __init__(self):
        self._parameters: dict[str, DiffTensor] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> DiffTensor:
        if name in self._parameters:
            raise GraphConstructionError(f'Parameter {name!r} registered twice.')
        tensor = DiffTensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)
        self._parameters[name] = tensor
        return tensor

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._buffers:
            raise GraphConstructionError(f'Buffer {name!r} registered twice.')
        buffer = np.array(value, dtype=np.float32)
        self._buffers[name] = buffer
        return buffer

    def parameters(self) -> dict[str, DiffTensor]:
        return self._parameters

    def buffers(self) -> dict[str, np.ndarray]:
        return self._buffers

    def __contains__(self, name: str) -> bool:
        return name in self._parameters

    def __getitem__(self, name: str) -> DiffTensor:
        return self._parameters[name]

    def count(self, prefix: str = '') -> int:
        return int(sum(p.value.size for name, p in self._parameters.items() if name.startswith(prefix)))

    def zero_grad(self):
        for parameter in self._parameters.values():
            parameter.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self._parameters.items()}
        state.update({BUFFER_PREFIX + name: b.copy() for name, b in self._buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        expected = set(self._parameters) | {BUFFER_PREFIX + name for name in self._buffers}
        if strict:
            missing = sorted(expected - set(state))
            if missing:
                raise ModelConfigError(f'Checkpoint is missing {len(missing)} tensors, first: {missing[0]!r}.')
        for name, value in state.items():
            if name.startswith(BUFFER_PREFIX):
                target = self._buffers.get(name[len(BUFFER_PREFIX):])
                if target is None:
                    continue
                if target.shape != value.shape:
                    raise ModelConfigError(f'Buffer {name!r}: checkpoint shape {value.shape} != model {target.shape}.')
                target[...] = value
            elif name in self._parameters:
                parameter = self._parameters[name]
                if parameter.value.shape != tuple(value.shape):
                    raise ModelConfigError(
                        f'Parameter {name!r}: checkpoint shape {tuple(value.shape)} != model {parameter.value.shape}.'
                    )
                parameter.value = np.array(value, dtype=np.float32)
        logger.debug('Loaded %d tensors into registry', len(state))
