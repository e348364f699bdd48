"""SGD with momentum and coupled weight decay, plus the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dwdr.autodiff import Node
from dwdr.errors import ConfigError, DimensionError


@dataclass
class OptimState:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: dict[str, Node], state: OptimState, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
    """In-place update ``v = m*v + (g + wd*w); w -= lr*v``.

    ``grads`` defaults to each node's accumulated ``grad``.
    """
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        if g.shape != p.value.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.value.shape}")
        g = g + state.weight_decay * p.value
        v = state.velocity.get(name)
        v = g if v is None else state.momentum * v + g
        state.velocity[name] = v
        p.value = p.value - lr * v


def lr_at_epoch(base_lr: float, epoch: int, epochs: int, decay_epoch: int, decay_factor: float) -> float:
    if not 0 <= epoch < epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {epochs})")
    return base_lr * decay_factor if epoch >= decay_epoch else base_lr
