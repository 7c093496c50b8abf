"""SGD with momentum, weight decay and a step learning-rate schedule.

Update rule per parameter:

    v <- momentum * v + (g + weight_decay * w)
    w <- w - lr * v

Weight decay is applied to every parameter, biases included (switch it
off with weight_decay=0). The default schedule multiplies the rate by
0.1 at 100/110 and 105/110 of the configured epoch count, matching the
decay points of a 110-epoch run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .models import Model


def default_schedule(epochs: int) -> list[tuple[int, float]]:
    """(epoch, multiplier) pairs; the multiplier kicks in at that 0-based epoch."""
    if epochs <= 0:
        return []
    b1 = round(epochs * 100 / 110)
    b2 = round(epochs * 105 / 110)
    sched = []
    if b1 < epochs:
        sched.append((b1, 0.1))
    if b2 < epochs and b2 > b1:
        sched.append((b2, 0.1))
    return sched


@dataclass
class SGDState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: list[tuple[int, float]] = field(default_factory=list)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for boundary, mult in self.schedule:
            if epoch >= boundary:
                lr *= mult
        return lr


def make_sgd(lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 5e-4,
             epochs: int | None = None, schedule: list[tuple[int, float]] | None = None) -> SGDState:
    if schedule is None:
        schedule = default_schedule(epochs) if epochs else []
    return SGDState(lr=lr, momentum=momentum, weight_decay=weight_decay, schedule=list(schedule))


def sgd_step(model: Model, state: SGDState, epoch: int = 0):
    """One update over all parameters; raises NumericError on NaN gradients."""
    lr = state.lr_at(epoch)
    for name, p in model.named_parameters().items():
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            state.velocity[name] = v
        v *= state.momentum
        v += g + state.weight_decay * p.data
        p.data -= lr * v
