"""Grad-CAM heatmaps of the student's fake score."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from skimage import transform

from cfm.core.errors import ShapeError
from cfm.core.tensor import Tensor, backward, no_grad

from .dataset import write_pgm
from .model import STUDENT, CfmModel

logger = logging.getLogger(__name__)


def grad_cam(model: CfmModel, image: np.ndarray) -> np.ndarray:
    """Heatmap in ``[0, 1]`` at the image resolution for one HxWx3 frame.

    Channel weights are the spatial mean of d(fake logit)/d(feature map);
    the map is ``relu(sum_c w_c F_c)``, bilinearly upsampled and
    max-normalized.  A map that is zero everywhere is returned as zeros.
    """

    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"grad_cam: expected an HxWx3 frame, got {image.shape}")
    batch = np.transpose(image, (2, 0, 1))[None].astype(np.float64)
    with no_grad():
        features = model.encode(STUDENT, batch)
    leaf = Tensor(features.data, requires_grad=True)
    logit = model.classify_logit(leaf)
    backward(logit)
    model.zero_grad()

    gradients = leaf.grad[0]
    weights = gradients.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, leaf.data[0], axes=(0, 0)), 0.0)
    heatmap = transform.resize(cam, image.shape[:2], order=1, mode="edge", anti_aliasing=False)
    heatmap = np.maximum(heatmap, 0.0)
    peak = float(heatmap.max())
    if peak <= 0.0:
        logger.warning("Grad-CAM map is zero everywhere; emitting an all-zero heatmap")
        return np.zeros(image.shape[:2])
    return heatmap / peak


def region_contrast(heatmap: np.ndarray, region: np.ndarray) -> Optional[float]:
    """Mean heat inside ``region`` minus mean heat outside it."""

    region = region.astype(bool)
    if region.all() or not region.any():
        return None
    return float(heatmap[region].mean() - heatmap[~region].mean())


def write_heatmap(path: Path, heatmap: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, heatmap)
    return path


__all__ = ["grad_cam", "region_contrast", "write_heatmap"]
