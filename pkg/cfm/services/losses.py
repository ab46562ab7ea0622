"""Instance, local-patch and cross-entropy objectives.

The local similarity loss is a single fused :class:`Function` over the two
patch-similarity matrices, so its backward rule is written out once instead
of being assembled from dozens of masked elementwise ops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from cfm.core import ops
from cfm.core.config import LossConfig
from cfm.core.errors import ShapeError, TrainingError
from cfm.core.tensor import Function, Tensor

logger = logging.getLogger(__name__)

LN10 = math.log(10.0)


# instance ------------------------------------------------------------------


def instance_loss(z_anc: Tensor, z_pos: Tensor, z_neg: Tensor, d_ins: float = 1.2) -> Tensor:
    """``max(d_ins + a.n - a.p, 0)``, averaged over the batch when inputs are ``[N, C*]``."""

    if not z_anc.shape == z_pos.shape == z_neg.shape:
        raise ShapeError(f"instance_loss: shapes {z_anc.shape}, {z_pos.shape}, {z_neg.shape} differ")
    margin = ops.sub(ops.dot(z_anc, z_neg), ops.dot(z_anc, z_pos))
    return ops.mean(ops.relu(ops.add_scalar(margin, d_ins)))


# local ---------------------------------------------------------------------


def _side_terms(
    sims: np.ndarray,
    included: np.ndarray,
    exponent: np.ndarray,
    weighted: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean of ``1 - sim`` over ``included`` pairs and its weight shares.

    Returns ``(mean [.., P], shares [.., P, P])``; rows with nothing included
    have mean 0 and all-zero shares.
    """

    if weighted:
        weights = np.where(included, np.power(10.0, np.where(included, exponent, 0.0)), 0.0)
    else:
        weights = included.astype(np.float64)
    total = weights.sum(axis=-1)
    safe = np.where(total > 0.0, total, 1.0)
    shares = weights / safe[..., None]
    mean = np.sum(shares * (1.0 - sims), axis=-1)
    return mean, shares


class LocalSimilarityLoss(Function):
    """Patch-level loss over ``sim_pos`` and ``sim_neg`` of shape ``[N, P, P]``.

    ``sim_pos[n, i, m]`` is the similarity of anchor patch ``i`` with patch
    ``m`` of the positive image, ``sim_neg`` likewise for the negative.
    """

    name = "local_similarity_loss"

    def forward(self, sim_pos, sim_neg):
        if sim_pos.ndim != 3 or sim_pos.shape != sim_neg.shape:
            raise ShapeError(f"{self.name}: similarity shapes {sim_pos.shape} and {sim_neg.shape}")
        labels_anc = self.params["labels_anc"]
        labels_pos = self.params["labels_pos"]
        labels_neg = self.params["labels_neg"]
        s_pos, s_neg = self.params["s_pos"], self.params["s_neg"]
        weighted = not self.params.get("uniform_tau", False)
        k = LN10 if weighted else 0.0

        pos_set = labels_pos[:, None, :] == labels_anc[:, :, None]
        neg_set = labels_neg[:, None, :] != labels_anc[:, :, None]
        valid = pos_set.any(axis=-1)

        pos_in = pos_set & (sim_pos < s_pos)
        neg_in = neg_set & (sim_neg > s_neg)
        t_pos, shares_pos = _side_terms(sim_pos, pos_in, s_pos - sim_pos, weighted)
        u_neg, shares_neg = _side_terms(sim_neg, neg_in, sim_neg - s_neg, weighted)
        t_neg = -u_neg
        per_patch = np.where(valid, t_pos + t_neg, 0.0)

        valid_counts = valid.sum(axis=-1)
        contributing = valid_counts > 0
        n_contributing = int(contributing.sum())
        if n_contributing == 0:
            self.saved["scale"] = np.zeros(valid.shape)
            self.saved.update(d_pos=np.zeros_like(sim_pos), d_neg=np.zeros_like(sim_neg))
            return np.array(0.0)

        # d(loss)/d(patch term) for every anchor patch
        scale = np.where(valid, 1.0 / np.maximum(valid_counts, 1)[:, None], 0.0) / n_contributing
        d_pos = shares_pos * (-1.0 + k * (t_pos[..., None] - (1.0 - sim_pos)))
        d_neg = shares_neg * (1.0 - k * (1.0 - sim_neg) - k * t_neg[..., None])
        self.saved.update(
            d_pos=d_pos * scale[..., None],
            d_neg=d_neg * scale[..., None],
        )
        return np.array(float(np.sum(per_patch * scale)))

    def backward(self, grad, sim_pos, sim_neg):
        g = grad.item()
        return g * self.saved["d_pos"], g * self.saved["d_neg"]


@dataclass
class LocalLossResult:
    loss: Tensor
    patches: int
    skipped_patches: int
    contributing_triplets: int

    @property
    def degenerate(self) -> bool:
        return self.contributing_triplets == 0


def patch_matrix(z: Tensor) -> Tensor:
    """``[N, C*, h, w]`` (or ``[C*, h, w]``) -> ``[N, P, C*]``."""

    if z.ndim == 3:
        z = ops.reshape(z, (1,) + z.shape)
    if z.ndim != 4:
        raise ShapeError(f"patch_matrix: expected [N,C,h,w] embeddings, got {z.shape}")
    n, channels, height, width = z.shape
    flat = ops.reshape(z, (n, channels, height * width))
    return ops.transpose(flat, (0, 2, 1))


def patch_similarities(z_anc: Tensor, z_other: Tensor) -> Tensor:
    """Cosine similarities ``[N, P, P]`` between unit-norm patch embeddings."""

    if z_anc.shape != z_other.shape:
        raise ShapeError(f"patch_similarities: shapes {z_anc.shape} and {z_other.shape} differ")
    anchors = patch_matrix(z_anc)
    others = ops.transpose(patch_matrix(z_other), (0, 2, 1))
    return ops.matmul(anchors, others)


def _as_label_grid(labels: np.ndarray, batch: int, patches: int) -> np.ndarray:
    grid = np.asarray(labels).astype(bool).reshape(batch, -1)
    if grid.shape != (batch, patches):
        raise ShapeError(f"patch labels {np.shape(labels)} do not cover {batch}x{patches} patches")
    return grid


def compute_local_loss(
    z_l_anc: Tensor,
    z_l_pos: Tensor,
    z_l_neg: Tensor,
    labels_anc: np.ndarray,
    labels_pos: np.ndarray,
    labels_neg: np.ndarray,
    cfg: Optional[LossConfig] = None,
) -> LocalLossResult:
    """Local similarity loss plus bookkeeping on skipped patches."""

    cfg = cfg or LossConfig()
    sim_pos = patch_similarities(z_l_anc, z_l_pos)
    sim_neg = patch_similarities(z_l_anc, z_l_neg)
    batch, patches = sim_pos.shape[:2]
    grid_anc = _as_label_grid(labels_anc, batch, patches)
    grid_pos = _as_label_grid(labels_pos, batch, patches)
    grid_neg = _as_label_grid(labels_neg, batch, patches)

    loss = LocalSimilarityLoss.apply(
        sim_pos,
        sim_neg,
        labels_anc=grid_anc,
        labels_pos=grid_pos,
        labels_neg=grid_neg,
        s_pos=cfg.s_pos,
        s_neg=cfg.s_neg,
        uniform_tau=cfg.uniform_tau,
    )
    valid = (grid_pos[:, None, :] == grid_anc[:, :, None]).any(axis=-1)
    contributing = int(valid.any(axis=-1).sum())
    result = LocalLossResult(
        loss=loss,
        patches=int(valid.size),
        skipped_patches=int(valid.size - valid.sum()),
        contributing_triplets=contributing,
    )
    if result.degenerate:
        logger.warning("Local loss skipped every anchor patch (%d patches); contributing 0", result.patches)
    return result


def local_loss(
    z_l_anc: Tensor,
    z_l_pos: Tensor,
    z_l_neg: Tensor,
    labels_anc: np.ndarray,
    labels_pos: np.ndarray,
    labels_neg: np.ndarray,
    cfg: Optional[LossConfig] = None,
) -> Tensor:
    return compute_local_loss(z_l_anc, z_l_pos, z_l_neg, labels_anc, labels_pos, labels_neg, cfg).loss


# classification ------------------------------------------------------------


def ce_loss(y_hat: Tensor, y: np.ndarray | float) -> Tensor:
    """Mean binary cross-entropy; ``log`` is floored at 1e-12."""

    target = np.broadcast_to(np.asarray(y, dtype=np.float64), y_hat.shape).copy()
    complement = ops.add_scalar(ops.scale(y_hat, -1.0), 1.0)
    fake_term = ops.mul(Tensor(target), ops.log(y_hat))
    real_term = ops.mul(Tensor(1.0 - target), ops.log(complement))
    return ops.scale(ops.mean(ops.add(fake_term, real_term)), -1.0)


def total_loss(
    l_ce: Tensor,
    l_ins: Tensor,
    l_loc: Tensor,
    *,
    w_ce: float = 1.0,
    w_ins: float = 1.0,
    w_loc: float = 1.0,
) -> Tensor:
    """Weighted sum of the three terms; refuses non-finite components."""

    for name, term in (("l_ce", l_ce), ("l_ins", l_ins), ("l_loc", l_loc)):
        if term.size != 1:
            raise ShapeError(f"total_loss: {name} must be a scalar, got {term.shape}")
        if not np.isfinite(term.item()):
            raise TrainingError(f"non-finite {name} ({term.item()})")
    total = ops.add(ops.scale(l_ce, w_ce), ops.scale(l_ins, w_ins))
    return ops.add(total, ops.scale(l_loc, w_loc))


def zero_loss() -> Tensor:
    return Tensor(0.0)


__all__ = [
    "LocalLossResult",
    "LocalSimilarityLoss",
    "ce_loss",
    "compute_local_loss",
    "instance_loss",
    "local_loss",
    "patch_matrix",
    "patch_similarities",
    "total_loss",
    "zero_loss",
]
