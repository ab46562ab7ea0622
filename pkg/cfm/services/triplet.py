"""Fine-grained triplets, difference masks and patch labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from cfm.core.config import AUG_GROUPS, FAMILIES, AugRanges, TrainConfig
from cfm.core.errors import DatasetError, ShapeError

from .augment import AugSpec, apply_aug, sample_aug_spec
from .dataset import VideoCatalog

logger = logging.getLogger(__name__)

ZERO_MASK_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TripletOptions:
    feature_size: int = 8
    t_mask: float = 0.25
    use_aug: bool = True
    paired_aug: bool = True
    aug_groups: Tuple[str, ...] = AUG_GROUPS
    aug: AugRanges = field(default_factory=AugRanges)
    families: Tuple[str, ...] = FAMILIES
    min_frame_gap: int = 1

    @classmethod
    def from_config(cls, config: TrainConfig) -> "TripletOptions":
        return cls(
            feature_size=config.model.feature_size,
            t_mask=config.loss.t_mask,
            use_aug=config.use_aug,
            paired_aug=config.paired_aug,
            aug_groups=config.aug_groups,
            aug=config.aug,
            families=config.train_families,
            min_frame_gap=config.min_frame_gap,
        )


@dataclass
class TripletSample:
    anchor_id: str
    negative_id: str
    anchor_index: int
    positive_index: int
    anchor_label: int
    x_anc: np.ndarray
    x_pos: np.ndarray
    x_neg: np.ndarray
    diff_mask: np.ndarray
    patch_labels_anc: np.ndarray
    patch_labels_pos: np.ndarray
    patch_labels_neg: np.ndarray
    aug_spec_shared: AugSpec
    aug_spec_pos: AugSpec
    aug_spec_neg: AugSpec

    @property
    def negative_label(self) -> int:
        return 1 - self.anchor_label

    @property
    def negative_index(self) -> int:
        return self.anchor_index


def difference_mask(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """Channel-mean absolute difference, max-normalized (all zero when negligible)."""

    if frame_a.shape != frame_b.shape:
        raise ShapeError(f"difference_mask: frames {frame_a.shape} and {frame_b.shape} differ")
    diff = np.abs(frame_a - frame_b)
    if diff.ndim == 3:
        diff = diff.mean(axis=-1)
    peak = float(diff.max()) if diff.size else 0.0
    if peak <= ZERO_MASK_TOLERANCE:
        return np.zeros_like(diff)
    return diff / peak


def patch_labels(mask: np.ndarray, feature_h: int, feature_w: int, t_mask: float = 0.25) -> np.ndarray:
    """Average-pool ``mask`` onto the feature grid; ``True`` marks a fake patch."""

    height, width = mask.shape
    if height % feature_h or width % feature_w:
        raise ShapeError(f"patch_labels: mask {height}x{width} not divisible by grid {feature_h}x{feature_w}")
    pooled = mask.reshape(feature_h, height // feature_h, feature_w, width // feature_w).mean(axis=(1, 3))
    return pooled > t_mask


def _frame_pair_labels(
    dataset: VideoCatalog,
    fake_id: Optional[str],
    real_id: str,
    index: int,
    options: TripletOptions,
) -> Tuple[np.ndarray, np.ndarray]:
    size = options.feature_size
    real = dataset.frame(real_id, index)
    if fake_id is None:
        mask = np.zeros(real.shape[:2])
    else:
        mask = difference_mask(dataset.frame(fake_id, index), real)
    return mask, patch_labels(mask, size, size, options.t_mask)


def build_triplet(
    dataset: VideoCatalog,
    anchor_video_id: str,
    rng: np.random.Generator,
    options: TripletOptions | None = None,
) -> TripletSample:
    """Anchor and positive from one video, negative time-aligned from its counterpart."""

    options = options or TripletOptions()
    manifest = dataset.manifest
    anchor = manifest.get(anchor_video_id)
    counterparts = manifest.counterparts(anchor_video_id, options.families)
    if not counterparts:
        raise DatasetError(f"video {anchor_video_id} has no counterpart in families {options.families}")

    frame_count = dataset.frame_count(anchor_video_id)
    if frame_count < 2:
        raise DatasetError(f"video {anchor_video_id} has {frame_count} frame(s); triplets need 2")
    i = int(rng.integers(frame_count))
    candidates = [k for k in range(frame_count) if abs(k - i) >= options.min_frame_gap]
    if not candidates:
        raise DatasetError(f"video {anchor_video_id}: no positive frame {options.min_frame_gap} away from {i}")
    j = int(candidates[int(rng.integers(len(candidates)))])
    negative_id = counterparts[int(rng.integers(len(counterparts)))]
    if dataset.frame_count(negative_id) <= max(i, j):
        raise DatasetError(f"counterpart {negative_id} is shorter than anchor {anchor_video_id}")

    is_fake = anchor.label == "fake"
    fake_id = anchor_video_id if is_fake else negative_id
    real_id = negative_id if is_fake else anchor_video_id

    diff_mask, labels_at_i = _frame_pair_labels(dataset, fake_id, real_id, i, options)
    grid = labels_at_i.shape
    no_fake = np.zeros(grid, dtype=bool)
    if is_fake:
        _, labels_pos = _frame_pair_labels(dataset, anchor_video_id, real_id, j, options)
        labels_anc, labels_neg = labels_at_i, no_fake
        if not labels_anc.any():
            logger.warning("Fake anchor %s frame %d has no fake patch", anchor_video_id, i)
    else:
        labels_anc, labels_pos, labels_neg = no_fake, no_fake.copy(), labels_at_i

    if options.use_aug:
        shared = sample_aug_spec(rng, options.aug, options.aug_groups)
        spec_pos = sample_aug_spec(rng, options.aug, options.aug_groups)
        spec_neg = shared if options.paired_aug else sample_aug_spec(rng, options.aug, options.aug_groups)
    else:
        shared = spec_pos = spec_neg = AugSpec()

    return TripletSample(
        anchor_id=anchor_video_id,
        negative_id=negative_id,
        anchor_index=i,
        positive_index=j,
        anchor_label=1 if is_fake else 0,
        x_anc=apply_aug(dataset.frame(anchor_video_id, i), shared),
        x_pos=apply_aug(dataset.frame(anchor_video_id, j), spec_pos),
        x_neg=apply_aug(dataset.frame(negative_id, i), spec_neg),
        diff_mask=diff_mask,
        patch_labels_anc=labels_anc,
        patch_labels_pos=labels_pos,
        patch_labels_neg=labels_neg,
        aug_spec_shared=shared,
        aug_spec_pos=spec_pos,
        aug_spec_neg=spec_neg,
    )


@dataclass
class TripletBatch:
    """Channel-first arrays for a list of triplets."""

    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    labels: np.ndarray
    patch_labels_anc: np.ndarray
    patch_labels_pos: np.ndarray
    patch_labels_neg: np.ndarray
    anchor_ids: List[str]

    def __len__(self) -> int:
        return len(self.anchor_ids)


def to_channels_first(images: Iterable[np.ndarray]) -> np.ndarray:
    return np.stack([np.transpose(image, (2, 0, 1)) for image in images]).astype(np.float64)


def stack_batch(samples: Sequence[TripletSample]) -> TripletBatch:
    if not samples:
        raise DatasetError("cannot build an empty triplet batch")
    return TripletBatch(
        anchors=to_channels_first(s.x_anc for s in samples),
        positives=to_channels_first(s.x_pos for s in samples),
        negatives=to_channels_first(s.x_neg for s in samples),
        labels=np.array([s.anchor_label for s in samples], dtype=np.float64),
        patch_labels_anc=np.stack([s.patch_labels_anc.reshape(-1) for s in samples]),
        patch_labels_pos=np.stack([s.patch_labels_pos.reshape(-1) for s in samples]),
        patch_labels_neg=np.stack([s.patch_labels_neg.reshape(-1) for s in samples]),
        anchor_ids=[s.anchor_id for s in samples],
    )


__all__ = [
    "TripletBatch",
    "TripletOptions",
    "TripletSample",
    "build_triplet",
    "difference_mask",
    "patch_labels",
    "stack_batch",
    "to_channels_first",
]
