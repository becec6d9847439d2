"""Softmax focal classification loss, smooth-L1 box regression and the two-head temporal consistency loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from event_detection.exceptions import ArgumentError
from event_detection.services.autodiff import ops
from event_detection.services.autodiff.tensor import DiffTensor, as_tensor

DEFAULT_GAMMA = 2.0
DEFAULT_BETA = 0.11
DEFAULT_PRIOR_BACKGROUND = 0.99


@dataclass
class LossBundle:
    classification: DiffTensor
    regression: DiffTensor
    consistency: DiffTensor

    @property
    def total(self) -> DiffTensor:
        return self.classification + self.regression + self.consistency

    def as_dict(self) -> dict[str, float]:
        values = {
            'loss_c': self.classification.item(),
            'loss_r': self.regression.item(),
            'loss_t': self.consistency.item(),
        }
        values['loss'] = values['loss_c'] + values['loss_r'] + values['loss_t']
        return values


def _zero(like: DiffTensor) -> DiffTensor:
    return DiffTensor(np.zeros((), dtype=like.dtype))


def init_focal_biases(num_classes: int, p_bg: float = DEFAULT_PRIOR_BACKGROUND) -> np.ndarray:
    """Logit biases for C object classes plus background (last).

    With zero weights the softmax assigns probability p_bg to background:
    exp(s) / (exp(s) + C) = p_bg for s = log(C * p_bg / (1 - p_bg)).
    """
    if num_classes < 1:
        raise ArgumentError(f'num_classes must be >= 1, got {num_classes}.')
    if not 0.0 < p_bg < 1.0:
        raise ArgumentError(f'Background prior must lie in (0, 1), got {p_bg}.')
    biases = np.zeros(num_classes + 1, dtype=np.float64)
    biases[-1] = math.log(num_classes * p_bg / (1.0 - p_bg))
    return biases


def softmax_focal_loss(logits: DiffTensor, target_class, gamma: float = DEFAULT_GAMMA,
                       weights: np.ndarray | None = None) -> DiffTensor:
    """Mean over anchors of -(1 - p_l)^gamma log p_l, p_l the softmax probability of the true class.

    weights optionally masks anchors (1 counts, 0 ignored); the mean is taken over counted anchors.
    """
    logits = as_tensor(logits)
    target = np.asarray(target_class, dtype=np.int64)
    num_classes = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ArgumentError(f'Targets {target.shape} do not match logits {logits.shape}.')
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise ArgumentError(f'Class index out of range [0, {num_classes}).')
    one_hot = np.eye(num_classes, dtype=logits.dtype)[target]
    log_p = ops.reduce_sum(ops.log_softmax(logits, axis=-1) * one_hot, axis=-1)
    if gamma == 0:
        per_anchor = -log_p
    else:
        per_anchor = -(((1.0 - ops.exp(log_p)) ** gamma) * log_p)
    if weights is None:
        return ops.mean(per_anchor)
    weights = np.asarray(weights, dtype=logits.dtype)
    count = float(weights.sum())
    if count == 0:
        return _zero(logits)
    return ops.reduce_sum(per_anchor * weights) * (1.0 / count)


def smooth_l1(pred: DiffTensor, target, beta: float = DEFAULT_BETA, mask: np.ndarray | None = None) -> DiffTensor:
    """Mean piecewise smooth-L1 over elements; with an anchor mask (..., ) over the masked anchors' elements."""
    pred = as_tensor(pred)
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ArgumentError(f'smooth_l1: prediction {pred.shape} and target {target.shape} differ.')
    elementwise = ops.smooth_l1_elementwise(pred - target, beta)
    if mask is None:
        return ops.mean(elementwise)
    mask = np.asarray(mask, dtype=pred.dtype)
    if mask.shape != pred.shape[:-1]:
        raise ArgumentError(f'smooth_l1: anchor mask {mask.shape} does not fit {pred.shape}.')
    count = float(mask.sum()) * pred.shape[-1]
    if count == 0:
        return _zero(pred)
    return ops.reduce_sum(elementwise * mask[..., None]) * (1.0 / count)


def temporal_consistency_loss(next_pred: DiffTensor, next_target, now_second: DiffTensor | None,
                              now_first: DiffTensor, next_mask: np.ndarray | None = None,
                              now_mask: np.ndarray | None = None, beta: float = DEFAULT_BETA) -> DiffTensor:
    """L_s(B'_{k+1}, B*_{k+1}) + L_s(B'_k, B_k).

    B_k from the first head is a constant target; no gradient reaches the first
    head through the second term. now_second is None when no previous second-head
    prediction exists (sequence or truncation-window start).
    """
    next_pred = as_tensor(next_pred)
    if next_pred.shape != as_tensor(now_first).shape:
        raise ArgumentError(f'Anchor misalignment: {next_pred.shape} vs {as_tensor(now_first).shape}.')
    first_term = smooth_l1(next_pred, next_target, beta, next_mask)
    if now_second is None:
        return first_term
    second_term = smooth_l1(now_second, ops.detach(now_first), beta, now_mask)
    return first_term + second_term


@dataclass
class StepTargets:
    """Per-step training targets for a batch of N sequences over A anchors."""

    labels: np.ndarray          # (N, A) class ids, background = num_classes
    deltas: np.ndarray          # (N, A, 4)
    positive: np.ndarray        # (N, A) bool
    next_deltas: np.ndarray     # (N, A, 4) targets of the same track one step later
    next_positive: np.ndarray   # (N, A) bool
    active: np.ndarray          # (N,) bool, False during warmup or without paired labels

    @property
    def anchor_weights(self) -> np.ndarray:
        return np.broadcast_to(self.active[:, None], self.labels.shape)


def detection_loss(cls_logits: DiffTensor, box_now: DiffTensor, box_next: DiffTensor | None,
                   targets: StepTargets, previous_next: DiffTensor | None = None, gamma: float = DEFAULT_GAMMA,
                   beta: float = DEFAULT_BETA, use_consistency: bool = True) -> LossBundle:
    """L_c over every anchor of active sequences, L_r and L_t over matched anchors."""
    weights = targets.anchor_weights.astype(np.float64)
    positive = targets.positive & targets.anchor_weights
    loss_c = softmax_focal_loss(cls_logits, targets.labels, gamma, weights)
    loss_r = smooth_l1(box_now, targets.deltas, beta, positive)
    if use_consistency and box_next is not None:
        next_positive = targets.next_positive & targets.anchor_weights
        loss_t = temporal_consistency_loss(box_next, targets.next_deltas, previous_next, box_now,
                                           next_positive, positive, beta)
    else:
        loss_t = _zero(as_tensor(box_now))
    return LossBundle(loss_c, loss_r, loss_t)
