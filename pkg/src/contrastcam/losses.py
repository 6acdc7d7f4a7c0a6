"""Contrast losses and the output-gradient seeds that start
backpropagation.

A seed pairs the scalar loss between the network output and a contrast
target with the gradient of that loss at the output. Cross-entropy
consumes logits directly (softmax fused via log-sum-exp), so graphs
ending in a softmax node are seeded at the node before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TargetError
from .tensor import Tensor


@dataclass(frozen=True)
class ContrastTarget:
    """What to contrast the prediction against: an alternative class,
    a scalar in the output range, or the prediction itself."""

    class_index: int | None = None
    value: float | None = None

    def __post_init__(self) -> None:
        if self.class_index is not None and self.value is not None:
            raise TargetError("contrast target cannot be both a class and a scalar")

    @property
    def is_self(self) -> bool:
        return self.class_index is None and self.value is None

    def describe(self) -> str:
        if self.class_index is not None:
            return f"class {self.class_index}"
        if self.value is not None:
            return f"value {self.value:g}"
        return "self"


def self_target() -> ContrastTarget:
    return ContrastTarget()


def class_target(index: int) -> ContrastTarget:
    return ContrastTarget(class_index=int(index))


def scalar_target(value: float) -> ContrastTarget:
    return ContrastTarget(value=float(value))


@dataclass(frozen=True)
class LossSeed:
    """Scalar loss plus its gradient at the network output."""

    loss_value: float
    output_grad: Tensor


def _class_index(target: int | ContrastTarget, n: int) -> int:
    if isinstance(target, ContrastTarget):
        if target.class_index is None:
            raise TargetError("expected a class target")
        q = target.class_index
    else:
        q = int(target)
    if not 0 <= q < n:
        raise TargetError(f"class index {q} outside [0, {n - 1}]")
    return q


def cross_entropy_seed(logits: Tensor, target: int | ContrastTarget) -> LossSeed:
    """loss = -log softmax(logits)[Q]; gradient = softmax(logits) - onehot(Q).

    With Q equal to the predicted class this is exactly the training
    objective's seed; the contrast degenerates to the plain loss.
    """
    z = logits.array.reshape(-1).astype(np.float64)
    n = z.size
    q = _class_index(target, n)
    m = z.max()
    shifted = z - m
    log_z = m + np.log(np.exp(shifted).sum())
    loss = float(log_z - z[q])
    p = np.exp(z - log_z)
    grad = p.copy()
    grad[q] -= 1.0
    return LossSeed(loss_value=loss, output_grad=Tensor(grad.astype(np.float32)))


def mse_seed(
    output: float | Tensor,
    target: float | ContrastTarget,
    output_range: tuple[float, float] | None = None,
) -> LossSeed:
    """loss = (y - Q)^2; gradient = 2(y - Q)."""
    if isinstance(output, Tensor):
        if output.array.size != 1:
            raise TargetError(f"regression output must be a scalar, got {output.array.size} values")
        y = float(output.array.reshape(-1)[0])
    else:
        y = float(output)
    if isinstance(target, ContrastTarget):
        if target.value is None:
            raise TargetError("expected a scalar target")
        q = target.value
    else:
        q = float(target)
    if output_range is not None:
        lo, hi = output_range
        if not lo <= q <= hi:
            raise TargetError(f"target {q:g} outside output range [{lo:g}, {hi:g}]")
    diff = y - q
    return LossSeed(loss_value=diff * diff, output_grad=Tensor(np.array([2.0 * diff], dtype=np.float32)))


def class_score_seed(n_classes: int, class_index: int, score: float = 0.0) -> LossSeed:
    """One-hot seed on the chosen class logit: the plain "why this class"
    gradient. loss_value carries the selected class score when given."""
    if not 0 <= class_index < n_classes:
        raise TargetError(f"class index {class_index} outside [0, {n_classes - 1}]")
    grad = np.zeros(n_classes, dtype=np.float32)
    grad[class_index] = 1.0
    return LossSeed(loss_value=float(score), output_grad=Tensor(grad))
