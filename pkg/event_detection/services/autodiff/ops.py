"""Differentiable operators on DiffTensor: activations, reductions, shape ops, conv, pooling and BatchNorm.

Image tensors are laid out (N, C, H, W). Convolutions and pools use "same"
padding with ceil-division output sizes.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from event_detection.exceptions import GraphConstructionError
from event_detection.services.autodiff.tensor import DiffTensor, as_tensor, unbroadcast


# elementwise


def relu(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)
    mask = x.value > 0

    def backward(grad):
        return (grad * mask,)

    return DiffTensor.from_op(x.value * mask, (x,), backward)


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    positive = v >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-v[positive]))
    exp_v = np.exp(v[~positive])
    out[~positive] = exp_v / (1.0 + exp_v)
    return out


def sigmoid(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)
    out_value = _stable_sigmoid(x.value)

    def backward(grad):
        return (grad * out_value * (1.0 - out_value),)

    return DiffTensor.from_op(out_value, (x,), backward)


def tanh(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)
    out_value = np.tanh(x.value)

    def backward(grad):
        return (grad * (1.0 - out_value * out_value),)

    return DiffTensor.from_op(out_value, (x,), backward)


def exp(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)
    out_value = np.exp(x.value)

    def backward(grad):
        return (grad * out_value,)

    return DiffTensor.from_op(out_value, (x,), backward)


def log(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)

    def backward(grad):
        return (grad / x.value,)

    return DiffTensor.from_op(np.log(x.value), (x,), backward)


def absolute(x: DiffTensor) -> DiffTensor:
    x = as_tensor(x)
    sign = np.sign(x.value)

    def backward(grad):
        return (grad * sign,)

    return DiffTensor.from_op(np.abs(x.value), (x,), backward)


# reductions and shape


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)

    def backward(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, x.shape).copy(),)

    return DiffTensor.from_op(x.value.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return reduce_sum(x, axes, keepdims) * (1.0 / max(count, 1))


def reshape(x: DiffTensor, shape) -> DiffTensor:
    x = as_tensor(x)
    try:
        out_value = x.value.reshape(shape)
    except ValueError as exc:
        raise GraphConstructionError(f'Cannot reshape {x.shape} into {shape}.') from exc

    def backward(grad):
        return (grad.reshape(x.shape),)

    return DiffTensor.from_op(out_value, (x,), backward)


def transpose(x: DiffTensor, axes) -> DiffTensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad):
        return (grad.transpose(inverse),)

    return DiffTensor.from_op(x.value.transpose(axes), (x,), backward)


def concat(tensors, axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out_value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise GraphConstructionError(f'Cannot concatenate shapes {[t.shape for t in tensors]}.') from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    return DiffTensor.from_op(out_value, tuple(tensors), backward)


def getitem(x: DiffTensor, index) -> DiffTensor:
    x = as_tensor(x)

    def backward(grad):
        full = np.zeros_like(x.value)
        np.add.at(full, index, grad)
        return (full,)

    return DiffTensor.from_op(x.value[index], (x,), backward)


def split_channels(x: DiffTensor, parts: int) -> list[DiffTensor]:
    """Split axis 1 into equal parts."""
    size = x.shape[1] // parts
    return [getitem(x, (slice(None), slice(i * size, (i + 1) * size))) for i in range(parts)]


def detach(x: DiffTensor) -> DiffTensor:
    return as_tensor(x).detach()


# softmax family


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_value = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        inner = (grad * out_value).sum(axis=axis, keepdims=True)
        return (out_value * (grad - inner),)

    return DiffTensor.from_op(out_value, (x,), backward)


def log_softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_value = shifted - log_norm
    probs = np.exp(out_value)

    def backward(grad):
        return (grad - probs * grad.sum(axis=axis, keepdims=True),)

    return DiffTensor.from_op(out_value, (x,), backward)


# dense layers


def dense(x: DiffTensor, weight: DiffTensor, bias: DiffTensor | None = None) -> DiffTensor:
    """x (N, I) @ weight (I, O) + bias (O,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise GraphConstructionError(f'dense: input {x.shape} does not fit weight {weight.shape}.')
    out_value = x.value @ weight.value
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise GraphConstructionError(f'dense: bias {bias.shape} does not fit weight {weight.shape}.')
        out_value = out_value + bias.value
        parents.append(bias)

    def backward(grad):
        grads = [grad @ weight.value.T, x.value.T @ grad]
        if bias is not None:
            grads.append(grad.sum(axis=0))
        return tuple(grads)

    return DiffTensor.from_op(out_value, tuple(parents), backward)


# convolution


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Returns (output size, pad before, pad after) for ceil-division "same" padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_output_size(size: int, stride: int) -> int:
    return -(-size // stride)


def conv2d(x: DiffTensor, weight: DiffTensor, bias: DiffTensor | None = None, stride: int = 1,
           padding: str | int = 'same') -> DiffTensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, kh, kw) weight."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise GraphConstructionError(f'conv2d expects 4-axis input and weight, got {x.shape} and {weight.shape}.')
    if x.shape[1] != weight.shape[1]:
        raise GraphConstructionError(f'conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}.')
    if stride < 1:
        raise GraphConstructionError(f'conv2d: stride must be >= 1, got {stride}.')
    n, c, height, width = x.shape
    out_c, _, kh, kw = weight.shape
    if padding == 'same':
        out_h, top, bottom = same_padding(height, kh, stride)
        out_w, left, right = same_padding(width, kw, stride)
    else:
        pad = int(padding)
        top = bottom = left = right = pad
        out_h = (height + 2 * pad - kh) // stride + 1
        out_w = (width + 2 * pad - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise GraphConstructionError(f'conv2d: kernel {kh}x{kw} does not fit input {height}x{width}.')

    padded = np.pad(x.value, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    out_value = np.tensordot(windows, weight.value, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_c,):
            raise GraphConstructionError(f'conv2d: bias {bias.shape} does not match {out_c} output channels.')
        out_value = out_value + bias.value.reshape(1, -1, 1, 1)
        parents.append(bias)
    out_value = np.ascontiguousarray(out_value)

    def backward(grad):
        grad_weight = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_windows = np.tensordot(grad, weight.value, axes=([1], [0]))
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    grad_windows[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, top:top + height, left:left + width]
        grads = [grad_x, grad_weight]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return DiffTensor.from_op(out_value, tuple(parents), backward)


# pooling


def _pool_geometry(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = max(-(-(size - kernel) // stride) + 1, 1) if size >= kernel else 1
    padded = (out - 1) * stride + kernel
    return out, padded - size


def _pool_windows(values: np.ndarray, kernel: int, stride: int, fill: float):
    n, c, height, width = values.shape
    out_h, extra_h = _pool_geometry(height, kernel, stride)
    out_w, extra_w = _pool_geometry(width, kernel, stride)
    padded = np.pad(values, ((0, 0), (0, 0), (0, extra_h), (0, extra_w)), constant_values=fill)
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return windows[:, :, :out_h, :out_w], padded.shape, (out_h, out_w)


def _scatter_windows(grad_windows: np.ndarray, padded_shape, kernel: int, stride: int, out_hw, height, width):
    out_h, out_w = out_hw
    grad_padded = np.zeros(padded_shape, dtype=grad_windows.dtype)
    for i in range(kernel):
        for j in range(kernel):
            grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_windows[..., i, j]
    return grad_padded[:, :, :height, :width]


def max_pool2d(x: DiffTensor, kernel: int = 2, stride: int | None = None) -> DiffTensor:
    """Max pooling with ceil-mode output; the gradient goes to the first maximal element."""
    x = as_tensor(x)
    stride = stride or kernel
    height, width = x.shape[2:]
    windows, padded_shape, out_hw = _pool_windows(x.value, kernel, stride, -np.inf)
    flat = windows.reshape(*windows.shape[:4], kernel * kernel)
    arg = flat.argmax(axis=-1)
    out_value = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(grad):
        grad_windows = np.zeros(flat.shape, dtype=grad.dtype)
        np.put_along_axis(grad_windows, arg[..., None], grad[..., None], axis=-1)
        grad_windows = grad_windows.reshape(windows.shape)
        return (_scatter_windows(grad_windows, padded_shape, kernel, stride, out_hw, height, width),)

    return DiffTensor.from_op(out_value, (x,), backward)


def avg_pool2d(x: DiffTensor, kernel: int = 2, stride: int | None = None) -> DiffTensor:
    """Average pooling with ceil-mode output; border windows average only their valid pixels."""
    x = as_tensor(x)
    stride = stride or kernel
    height, width = x.shape[2:]
    windows, padded_shape, out_hw = _pool_windows(x.value, kernel, stride, 0.0)
    ones = np.ones((1, 1, height, width), dtype=x.dtype)
    count_windows, _, _ = _pool_windows(ones, kernel, stride, 0.0)
    counts = count_windows.sum(axis=(-2, -1))
    out_value = windows.sum(axis=(-2, -1)) / counts

    def backward(grad):
        share = (grad / counts)[..., None, None]
        grad_windows = np.broadcast_to(share, windows.shape) * count_windows
        return (_scatter_windows(grad_windows, padded_shape, kernel, stride, out_hw, height, width),)

    return DiffTensor.from_op(out_value, (x,), backward)


def global_avg_pool(x: DiffTensor) -> DiffTensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


# normalisation


def batchnorm2d(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.9, eps: float = 1e-5) -> DiffTensor:
    """Per-channel BatchNorm over (N, H, W).

    Training mode normalises with batch statistics and updates the running
    buffers in place as running = momentum * running + (1 - momentum) * batch.
    A batch with a single value per channel cannot be normalised by its own
    statistics and uses the running buffers instead.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise GraphConstructionError(f'batchnorm2d: input {x.shape} does not fit {gamma.shape} scale.')
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    use_batch = training and count > 1
    if use_batch:
        mu = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var * count / (count - 1)
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.value - mu.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out_value = gamma.value.reshape(1, -1, 1, 1) * x_hat + beta.value.reshape(1, -1, 1, 1)

    def backward(grad):
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        d_hat = grad * gamma.value.reshape(1, -1, 1, 1)
        scale = inv_std.reshape(1, -1, 1, 1)
        if use_batch:
            grad_x = scale / count * (
                count * d_hat
                - d_hat.sum(axis=axes, keepdims=True)
                - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = d_hat * scale
        return grad_x, grad_gamma, grad_beta

    return DiffTensor.from_op(out_value, (x, gamma, beta), backward)


def smooth_l1_elementwise(diff: DiffTensor, beta: float) -> DiffTensor:
    """0.5 d^2 / beta where |d| < beta, |d| - beta / 2 elsewhere."""
    diff = as_tensor(diff)
    magnitude = absolute(diff)
    quadratic = (magnitude.value < beta).astype(diff.dtype)
    return quadratic * (diff * diff) * (0.5 / beta) + (1.0 - quadratic) * (magnitude - beta / 2.0)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


__all__ = [
    'absolute', 'avg_pool2d', 'batchnorm2d', 'concat', 'conv2d', 'conv_output_size', 'dense', 'detach',
    'exp', 'getitem', 'global_avg_pool', 'log', 'log_softmax', 'max_pool2d', 'mean', 'reduce_sum', 'relu',
    'reshape', 'same_padding', 'sigmoid', 'smooth_l1_elementwise', 'softmax', 'split_channels', 'tanh',
    'transpose', 'unbroadcast', 'xavier_bound',
]
