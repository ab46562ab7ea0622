"""Adam with an additive L2 weight-decay term and the step learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GradientError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for one parameter list."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(
        cls,
        params: Sequence[Tensor],
        *,
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            lr=lr,
            weight_decay=weight_decay,
            betas=betas,
            eps=eps,
            first_moments=[np.zeros_like(p.data) for p in params],
            second_moments=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    *,
    skip_missing: bool = False,
) -> Sequence[Tensor]:
    """Update ``params`` in place and advance ``state.step`` by one.

    Weight decay enters as ``g + weight_decay * p`` before the moment update.
    A ``None`` gradient is an error unless ``skip_missing``, in which case that
    parameter and its moments are left untouched.
    """

    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.first_moments:
        state.first_moments = [np.zeros_like(p.data) for p in params]
        state.second_moments = [np.zeros_like(p.data) for p in params]
    if len(state.first_moments) != len(params):
        raise ShapeError(
            f"adam_step: state tracks {len(state.first_moments)} parameters, got {len(params)}"
        )

    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            if skip_missing:
                continue
            raise GradientError(f"adam_step: parameter {index} {param.shape} has no gradient")
        if grad.shape != param.shape or state.first_moments[index].shape != param.shape:
            raise ShapeError(
                f"adam_step: parameter {index} shape {param.shape}, gradient {grad.shape}, "
                f"moment {state.first_moments[index].shape}"
            )

    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        g = grad + state.weight_decay * param.data if state.weight_decay else grad
        m = state.first_moments[index]
        v = state.second_moments[index]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def step_decay_lr(base_lr: float, epoch: int, *, factor: float = 0.5, every: int = 5) -> float:
    """``base_lr * factor ** floor(epoch / every)``."""

    return base_lr * factor ** (epoch // every)


def moments_by_name(names: Sequence[str], state: AdamState) -> Dict[str, np.ndarray]:
    """Flatten the moment buffers into ``{"m.<name>": ..., "v.<name>": ...}``."""

    buffers: Dict[str, np.ndarray] = {}
    for name, m, v in zip(names, state.first_moments, state.second_moments):
        buffers[f"m.{name}"] = m
        buffers[f"v.{name}"] = v
    return buffers


__all__ = ["AdamState", "adam_step", "moments_by_name", "step_decay_lr"]
