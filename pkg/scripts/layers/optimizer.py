from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from scripts.autograd.tensor import Tensor
from scripts.utils.errors import ContractViolation


@dataclass
class OptimizerState:
    """
    SGD with momentum, L2 weight decay and per-epoch learning-rate decay.

    Attributes:
        learning_rate (float): Initial learning rate eta_0.
        momentum (float): mu.
        weight_decay (float): lambda, added to the gradient as lambda * w.
        lr_decay (float): delta; lr(e) = eta_0 / (1 + delta * e).
        epoch (int): Epochs completed so far.
        velocities (Dict[str, np.ndarray]): Per-parameter velocity, created as zeros.
    """

    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_decay: float = 1e-4
    epoch: int = 0
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return lr_at_epoch(self, self.epoch)


def lr_at_epoch(state: OptimizerState, epoch: int) -> float:
    """eta_0 / (1 + delta * epoch)"""
    return state.learning_rate / (1.0 + state.lr_decay * epoch)


def sgd_step(params: Dict[str, Tensor], state: OptimizerState) -> None:
    """
    One update of every parameter, then clear the gradients.

    v <- mu * v + (grad + lambda * w);  w <- w - lr * v

    Args:
        params (Dict[str, Tensor]): Named parameters with populated gradients.
        state (OptimizerState): Hyperparameters and velocities, updated in place.

    Raises:
        ContractViolation: If a parameter has no gradient.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ContractViolation(f"sgd_step: no gradient for {', '.join(missing)}")

    lr = state.current_lr()
    for name, param in params.items():
        velocity = state.velocities.get(name)
        if velocity is None:
            velocity = np.zeros_like(param.data)
        if velocity.shape != param.shape:
            raise ContractViolation(f"velocity shape {velocity.shape} != {param.shape} for {name}")
        velocity = state.momentum * velocity + (param.grad + state.weight_decay * param.data)
        velocity = velocity.astype(param.dtype, copy=False)
        state.velocities[name] = velocity
        param.data -= lr * velocity
        param.grad = None
