"""OpGraph wrapper and central finite-difference verification of backward rules."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from event_detection.exceptions import ArgumentError, GradientCheckError
from event_detection.services.autodiff.tensor import DiffTensor, topological_order

logger = logging.getLogger(__name__)


class OpGraph:
    """A scalar-valued forward callable over a named set of leaf tensors.

    run() evaluates the forward pass and records the topological node order;
    backward() clears parameter gradients and back-propagates from the output.
    """

    def __init__(self, forward: Callable[[], DiffTensor], parameters: dict[str, DiffTensor],
                 buffers: dict[str, np.ndarray] | None = None):
        self.forward = forward
        self.parameters = dict(parameters)
        self.buffers = buffers or {}
        self.nodes: list[DiffTensor] = []
        self.output: DiffTensor | None = None

    def run(self) -> DiffTensor:
        self.output = self.forward()
        self.nodes = topological_order(self.output)
        return self.output

    def backward(self):
        if self.output is None:
            self.run()
        if self.output.value.size != 1:
            raise ArgumentError(f'Graph output must be a scalar, got shape {self.output.shape}.')
        for parameter in self.parameters.values():
            parameter.grad = None
        self.output.backward()


@dataclass
class GradientReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3
    eps: float = 1e-3

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def as_dict(self) -> dict:
        return {'errors': dict(self.errors), 'max_error': self.max_error, 'tol': self.tol, 'eps': self.eps,
                'passed': self.passed}


def _scalar(graph: OpGraph) -> float:
    out = graph.forward()
    return float(out.value.reshape(-1)[0])


def check_gradients(graph: OpGraph, eps: float = 1e-3, tol: float = 1e-3, max_entries: int = 32,
                    seed: int = 0, raise_on_failure: bool = True) -> GradientReport:
    """Compare analytic gradients against central differences for every parameter.

    Parameters are evaluated in float64 copies for the duration of the check and
    restored afterwards, along with any buffers the forward pass mutates. At most
    max_entries randomly chosen entries of each parameter are perturbed. The
    error of a parameter is max|a - n| / max(max|a|, max|n|, 1e-6).
    """
    originals = {name: p.value for name, p in graph.parameters.items()}
    saved_buffers = {name: b.copy() for name, b in graph.buffers.items()}
    rng = np.random.default_rng(seed)
    report = GradientReport(tol=tol, eps=eps)
    try:
        for parameter in graph.parameters.values():
            parameter.value = parameter.value.astype(np.float64)
        output = graph.run()
        if output.value.size != 1:
            raise ArgumentError(f'Gradient check needs a scalar graph output, got shape {output.shape}.')
        graph.backward()
        analytic = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value)).astype(np.float64)
            for name, p in graph.parameters.items()
        }
        for name, parameter in graph.parameters.items():
            flat = parameter.value.reshape(-1)
            count = min(max_entries, flat.size)
            picks = rng.choice(flat.size, size=count, replace=False) if flat.size > count else np.arange(flat.size)
            numeric = np.empty(count, dtype=np.float64)
            for slot, index in enumerate(picks):
                base = flat[index]
                flat[index] = base + eps
                upper = _scalar(graph)
                flat[index] = base - eps
                lower = _scalar(graph)
                flat[index] = base
                numeric[slot] = (upper - lower) / (2.0 * eps)
            exact = analytic[name].reshape(-1)[picks]
            scale = max(np.abs(exact).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-6)
            report.errors[name] = float(np.abs(exact - numeric).max(initial=0.0) / scale)
    finally:
        for name, parameter in graph.parameters.items():
            parameter.value = originals[name]
            parameter.grad = None
        for name, buffer in graph.buffers.items():
            buffer[...] = saved_buffers[name]

    if not report.passed:
        worst = max(report.errors, key=report.errors.get)
        logger.warning('Gradient check failed: %s has relative error %.3g (tol %.3g)', worst, report.max_error, tol)
        if raise_on_failure:
            raise GradientCheckError(
                f'Gradient check failed for {worst!r}: relative error {report.max_error:.3g} > {tol:.3g}',
                report=report,
            )
    return report
