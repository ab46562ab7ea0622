"""Progressive Learning Controller: channel importance, drop schedule and masking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from cfm.core import ops
from cfm.core.errors import ConfigError, ShapeError
from cfm.core.tensor import Tensor

logger = logging.getLogger(__name__)

MAX_RHO = 0.5
STRATEGIES = ("plc", "random")

ArrayOrTensor = Union[np.ndarray, Tensor]


def _array(value: ArrayOrTensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


@dataclass
class ChangeRecord:
    iteration: int
    rho: float
    change_ratio: float


@dataclass
class PlcState:
    channels: int
    beta: float = 0.99
    m_star: Optional[np.ndarray] = None
    current_mask: Optional[np.ndarray] = None
    rho: float = 0.0
    change_ratio_log: List[ChangeRecord] = field(default_factory=list)

    @property
    def initialized(self) -> bool:
        return self.m_star is not None

    @property
    def dropped(self) -> np.ndarray:
        if self.current_mask is None:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(~self.current_mask)


def channel_importance(f_anc: ArrayOrTensor, f_pos: ArrayOrTensor, f_neg: ArrayOrTensor) -> np.ndarray:
    """``|GAP(a) - GAP(p)| - |GAP(a) - GAP(n)|`` per channel (per sample when batched)."""

    anc, pos, neg = _array(f_anc), _array(f_pos), _array(f_neg)
    if not anc.shape == pos.shape == neg.shape:
        raise ShapeError(f"channel_importance: shapes {anc.shape}, {pos.shape}, {neg.shape} differ")
    if anc.ndim not in (3, 4):
        raise ShapeError(f"channel_importance: expected [N,]C,H,W maps, got {anc.shape}")
    ga, gp, gn = (x.mean(axis=(-2, -1)) for x in (anc, pos, neg))
    return np.abs(ga - gp) - np.abs(ga - gn)


def update_importance(state: PlcState, m_batch_mean: np.ndarray) -> PlcState:
    """First call adopts the batch mean; later calls apply the EMA with ``state.beta``."""

    m_batch_mean = np.asarray(m_batch_mean, dtype=np.float64)
    if m_batch_mean.shape != (state.channels,):
        raise ShapeError(f"update_importance: expected ({state.channels},), got {m_batch_mean.shape}")
    if state.m_star is None:
        state.m_star = m_batch_mean.copy()
    else:
        state.m_star = state.beta * state.m_star + (1.0 - state.beta) * m_batch_mean
    return state


def drop_ratio(e_cur: int, e_total: int) -> float:
    """``0.5 cos(pi e_cur / e_total)`` during the first half of training, else 0."""

    if e_total <= 0:
        raise ConfigError(f"e_total must be positive, got {e_total}")
    if e_cur < 0:
        raise ConfigError(f"e_cur must be non-negative, got {e_cur}")
    if not e_cur < e_total / 2:
        return 0.0
    return MAX_RHO * math.cos(math.pi * e_cur / e_total)


def drop_count(channels: int, rho: float) -> int:
    return int(math.floor(channels * rho + 1e-9))


def importance_mask(m_star: np.ndarray, rho: float, *, invert: bool = False) -> np.ndarray:
    """Keep-mask dropping the last ``floor(C rho)`` channels of the ascending order.

    Ties keep ascending channel index.  ``invert`` ranks by ``-m_star``.
    """

    channels = m_star.shape[0]
    keep = np.ones(channels, dtype=bool)
    count = drop_count(channels, rho)
    if count == 0:
        return keep
    scores = Tensor(-m_star if invert else m_star)
    order = ops.sort_indices(scores).data.astype(int)
    keep[order[channels - count :]] = False
    return keep


def random_mask(channels: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    keep = np.ones(channels, dtype=bool)
    count = drop_count(channels, rho)
    if count:
        keep[rng.choice(channels, size=count, replace=False)] = False
    return keep


def mask_gate(keep: np.ndarray, rho: float) -> np.ndarray:
    return keep.astype(np.float64) / (1.0 - rho)


def apply_mask(features: Tensor, state: PlcState) -> Tensor:
    """Zero dropped channels and rescale survivors by ``1 / (1 - rho)``."""

    if state.rho == 0.0 or state.current_mask is None:
        return features
    return ops.channel_mask_scale(features, mask_gate(state.current_mask, state.rho))


def change_ratio(prev_mask: np.ndarray, new_mask: np.ndarray) -> float:
    """Share of newly dropped channels that were kept by ``prev_mask``."""

    if prev_mask.shape != new_mask.shape:
        raise ShapeError(f"change_ratio: masks {prev_mask.shape} and {new_mask.shape} differ")
    new_dropped = ~new_mask
    changed = np.count_nonzero(new_dropped & prev_mask)
    return changed / max(1, int(np.count_nonzero(new_dropped)))


class ProgressiveController:
    """Per-run masking driver for either the importance-ranked or random strategy."""

    def __init__(
        self,
        channels: int,
        *,
        beta: float = 0.99,
        strategy: str = "plc",
        invert_importance: bool = False,
        random_ratio: float = MAX_RHO,
        seed: int = 0,
    ):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown mask strategy {strategy!r}; expected one of {STRATEGIES}")
        self.state = PlcState(channels=channels, beta=beta)
        self.strategy = strategy
        self.invert_importance = invert_importance
        self.random_ratio = random_ratio
        self.seed = seed

    def begin_epoch(self, e_cur: int, e_total: int) -> float:
        if self.strategy == "random":
            drop_ratio(e_cur, e_total)  # validates the epoch pair
            rho = self.random_ratio if e_cur < e_total / 2 else 0.0
        else:
            rho = drop_ratio(e_cur, e_total)
        self.state.rho = rho
        return rho

    def observe(self, importance: np.ndarray, iteration: int) -> np.ndarray:
        """Fold a batch of importance vectors into ``m_star`` and refresh the mask."""

        importance = np.asarray(importance, dtype=np.float64)
        batch_mean = importance.mean(axis=0) if importance.ndim == 2 else importance
        update_importance(self.state, batch_mean)

        rho = self.state.rho
        if self.strategy == "random":
            keep = random_mask(self.state.channels, rho, np.random.default_rng([self.seed, iteration, 4242]))
        else:
            keep = importance_mask(self.state.m_star, rho, invert=self.invert_importance)

        previous = self.state.current_mask
        ratio = float("nan") if previous is None else change_ratio(previous, keep)
        self.state.current_mask = keep
        self.state.change_ratio_log.append(ChangeRecord(iteration=iteration, rho=rho, change_ratio=ratio))
        return keep

    def apply(self, features: Tensor) -> Tensor:
        return apply_mask(features, self.state)


__all__ = [
    "ChangeRecord",
    "PlcState",
    "ProgressiveController",
    "apply_mask",
    "change_ratio",
    "channel_importance",
    "drop_count",
    "drop_ratio",
    "importance_mask",
    "mask_gate",
    "random_mask",
    "update_importance",
]
