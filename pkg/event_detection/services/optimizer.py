"""Bias-corrected Adam over a named parameter set."""

from __future__ import annotations

import logging

import numpy as np

from event_detection.exceptions import TrainingError
from event_detection.services.autodiff.tensor import DiffTensor

logger = logging.getLogger(__name__)

MOMENT_PREFIXES = ('adam.m/', 'adam.v/')


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None], m: dict[str, np.ndarray],
              v: dict[str, np.ndarray], step: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> int:
    """Update params, m and v in place; step is the count before this update, the new count is returned.

    A missing gradient counts as zero. Any non-finite gradient aborts before a
    single parameter is touched.
    """
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise TrainingError(f'Non-finite gradient for parameter {name!r}.')
    beta1, beta2 = betas
    step += 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        grad = grad.astype(value.dtype, copy=False)
        m[name] *= beta1
        m[name] += (1.0 - beta1) * grad
        v[name] *= beta2
        v[name] += (1.0 - beta2) * grad * grad
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(value.dtype, copy=False)
    return step


class Adam:

    def __init__(self, parameters: dict[str, DiffTensor], lr: float = 2e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.parameters = parameters
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in parameters.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in parameters.items()}

    def step(self, lr: float | None = None):
        self.step_count = adam_step(
            {name: p.value for name, p in self.parameters.items()},
            {name: p.grad for name, p in self.parameters.items()},
            self.m,
            self.v,
            self.step_count,
            self.lr if lr is None else lr,
            self.betas,
            self.eps,
        )

    def zero_grad(self):
        for parameter in self.parameters.values():
            parameter.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {MOMENT_PREFIXES[0] + name: value.copy() for name, value in self.m.items()}
        state.update({MOMENT_PREFIXES[1] + name: value.copy() for name, value in self.v.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], step_count: int):
        for prefix, target in zip(MOMENT_PREFIXES, (self.m, self.v)):
            for name in target:
                key = prefix + name
                if key in state:
                    target[name][...] = state[key]
        self.step_count = int(step_count)
        logger.debug('Restored Adam moments at step %d', self.step_count)
