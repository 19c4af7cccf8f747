"""SGD with Nesterov momentum, cosine decay and an EMA of the parameters"""

from typing import Dict, Mapping, Optional, Tuple
import math
import logging

import numpy as np

from app.core.exceptions import NonFiniteError, ShapeError
from app.schemas.optim import EmaState, OptimState

logger = logging.getLogger(__name__)

# lr(s) = base * cos(COSINE_FRACTION * pi * s / S)
COSINE_FRACTION = 7.0 / 16.0


def cosine_lr(step: int, total_steps: int, base_lr: float = 0.03) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return float(base_lr * math.cos(COSINE_FRACTION * math.pi * step / total_steps))


def init_optim_state(
    params: Mapping[str, np.ndarray],
    momentum: float,
    weight_decay: float,
    base_lr: float,
    total_steps: int,
) -> OptimState:
    return OptimState(
        velocity={name: np.zeros_like(value) for name, value in params.items()},
        momentum=momentum,
        weight_decay=weight_decay,
        base_lr=base_lr,
        total_steps=total_steps,
    )


def sgd_nesterov_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> Tuple[Dict[str, np.ndarray], OptimState]:
    """
    One update with L2 weight decay folded into the gradient:

        g = grad + wd * theta
        v = momentum * v + g
        theta = theta - lr * (g + momentum * v)
    """
    updated: Dict[str, np.ndarray] = {}
    velocity: Dict[str, np.ndarray] = {}
    for name, theta in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(theta)
        if grad.shape != theta.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameter {theta.shape}", node=name)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("non-finite gradient", name=name)

        g = grad + state.weight_decay * theta
        v = state.momentum * state.velocity.get(name, np.zeros_like(theta)) + g
        updated[name] = theta - lr * (g + state.momentum * v)
        velocity[name] = v

    next_state = state.model_copy(update={
        "velocity": velocity,
        "step": min(state.step + 1, state.total_steps),
    })
    return updated, next_state


def init_ema(params: Mapping[str, np.ndarray], decay: float) -> EmaState:
    return EmaState(shadow={name: value.copy() for name, value in params.items()}, decay=decay)


def warmup_decay(decay: float, step: int) -> float:
    """Decay used at optimizer step `step`: min(decay, (1 + s) / (10 + s))"""
    if step < 0:
        raise ValueError("step must be non-negative")
    return min(decay, (1.0 + step) / (10.0 + step))


def ema_update(ema: EmaState, params: Mapping[str, np.ndarray], step: Optional[int] = None) -> EmaState:
    """
    shadow <- decay * shadow + (1 - decay) * params, written as a step toward params.

    With `step` given, the decay is capped by the warm-up ramp.
    """
    decay = ema.decay if step is None else warmup_decay(ema.decay, step)
    rate = 1.0 - decay
    shadow = {}
    for name, current in ema.shadow.items():
        target = params[name]
        if target.shape != current.shape:
            raise ShapeError(f"parameter shape {target.shape} does not match EMA shadow {current.shape}", node=name)
        shadow[name] = current + rate * (target - current)
    return EmaState(shadow=shadow, decay=ema.decay)
