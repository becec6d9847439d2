from event_detection.services.autodiff.gradcheck import GradientReport, OpGraph, check_gradients
from event_detection.services.autodiff.registry import ParameterRegistry
from event_detection.services.autodiff.tensor import DiffTensor, as_tensor, no_grad

__all__ = ['DiffTensor', 'GradientReport', 'OpGraph', 'ParameterRegistry', 'as_tensor', 'check_gradients', 'no_grad']
