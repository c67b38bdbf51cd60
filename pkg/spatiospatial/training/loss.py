"""
Class-imbalance weights and the weighted cross-entropy loss.
"""
from dataclasses import dataclass

import numpy as np

from spatiospatial.tensor import ops
from spatiospatial.tensor.core import Tensor
from spatiospatial.utils.errors import ContractError, ParameterError, ShapeError


@dataclass(frozen=True)
class ClassWeights:
    """W_c = 1 - counts[c] / total, plus the counts they came from."""
    weights: tuple
    counts: tuple

    @property
    def total(self):
        return sum(self.counts)

    @property
    def num_classes(self):
        return len(self.weights)

    def as_array(self, dtype=np.float64):
        return np.asarray(self.weights, dtype=dtype)

    @classmethod
    def uniform(cls, num_classes):
        """All weights 1: plain (unweighted) cross-entropy."""
        return cls(weights=(1.0,) * num_classes, counts=(0,) * num_classes)


def class_weights(counts):
    """
    Normalised inverse-frequency weights.
    Args:
        counts (sequence[int]): Samples per class.
    Returns:
        ClassWeights
    Raises:
        ParameterError: negative counts or an all-zero count vector.
    """
    counts = tuple(int(c) for c in counts)
    if not counts:
        raise ParameterError("class counts must not be empty")
    if any(c < 0 for c in counts):
        raise ParameterError(f"class counts must be non-negative, got {counts}")
    total = sum(counts)
    if total == 0:
        raise ParameterError("class counts are all zero; weights are undefined")
    return ClassWeights(weights=tuple(1.0 - c / total for c in counts), counts=counts)


def weighted_cross_entropy(logits, targets, weights):
    """
    Mean over the batch of W_y * (-log_softmax(logits)[y]).
    Args:
        logits (Tensor): (N, C).
        targets (array-like): N class indices in [0, C).
        weights (ClassWeights): One weight per class.
    Returns:
        Tensor: Scalar loss, differentiable w.r.t. logits.
    Raises:
        ContractError: out-of-range targets or a weight/class count mismatch.
    """
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.size:
        raise ShapeError(f"logits {logits.shape} do not match {targets.size} targets")
    num_classes = logits.shape[1]
    if weights.num_classes != num_classes:
        raise ContractError(f"{weights.num_classes} class weights for {num_classes} logit columns")
    if targets.size and (targets.min() < 0 or targets.max() >= num_classes):
        raise ContractError(f"target out of range [0, {num_classes}): {targets.tolist()}")
    log_probs = ops.pick(ops.log_softmax(logits), targets)
    per_sample = weights.as_array(logits.dtype)[targets]
    return -ops.mean(ops.mul(log_probs, Tensor(per_sample, dtype=logits.dtype)))
