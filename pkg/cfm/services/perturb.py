"""The seven robustness perturbations and their severity ladders.

``LADDERS`` is the single source of the severity tables; ``docs/perturbations.csv``
is generated from it and checked against it by the test suite.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage
from skimage import color

from cfm.core.errors import AugmentError

from .augment import dct_compress

logger = logging.getLogger(__name__)

KINDS: Tuple[str, ...] = (
    "saturation",
    "contrast",
    "block",
    "multiplicative-noise",
    "motion-blur",
    "pixelate",
    "compress",
)

# kind -> (parameter name, values for severities 1..5)
LADDERS: Dict[str, Tuple[str, Tuple[float, ...]]] = {
    "saturation": ("saturation_factor", (0.4, 0.3, 0.2, 0.1, 0.0)),
    "contrast": ("contrast_factor", (0.85, 0.725, 0.6, 0.475, 0.35)),
    "block": ("side_fraction", (0.15, 0.25, 0.35, 0.45, 0.55)),
    "multiplicative-noise": ("sigma", (0.05, 0.1, 0.15, 0.2, 0.25)),
    "motion-blur": ("kernel_length", (3, 5, 7, 9, 11)),
    "pixelate": ("block_size", (2, 4, 8, 16, 32)),
    "compress": ("quality", (60, 45, 30, 20, 10)),
}

DEFAULT_SEVERITY = 3


@dataclass(frozen=True)
class PerturbSpec:
    kind: str
    severity: int = DEFAULT_SEVERITY
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in LADDERS:
            raise AugmentError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if not 1 <= self.severity <= 5:
            raise AugmentError(f"severity {self.severity} outside 1..5")

    @property
    def parameter(self) -> float:
        return LADDERS[self.kind][1][self.severity - 1]


def _saturation(image: np.ndarray, factor: float, seed: int) -> np.ndarray:
    hsv = color.rgb2hsv(image)
    hsv[..., 1] *= factor
    return color.hsv2rgb(hsv)


def _contrast(image: np.ndarray, factor: float, seed: int) -> np.ndarray:
    grey = image.mean()
    return grey + (image - grey) * factor


def _block(image: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    height, width = image.shape[:2]
    rng = np.random.default_rng(seed)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * (height, width)
    side_h, side_w = fraction * height, fraction * width
    top = int(np.clip(round(cy - side_h / 2), 0, height))
    left = int(np.clip(round(cx - side_w / 2), 0, width))
    out = image.copy()
    out[top : min(height, top + int(round(side_h))), left : min(width, left + int(round(side_w)))] = 0.0
    return out


def _multiplicative_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return image * (1.0 + sigma * rng.standard_normal(image.shape))


def _motion_blur(image: np.ndarray, length: float, seed: int) -> np.ndarray:
    return ndimage.uniform_filter1d(image, size=int(length), axis=1, mode="reflect")


def _pixelate(image: np.ndarray, block: float, seed: int) -> np.ndarray:
    """Replace each ``block x block`` cell by its mean (edge cells may be smaller)."""

    block = int(block)
    height, width = image.shape[:2]
    rows = np.arange(0, height, block)
    cols = np.arange(0, width, block)
    sums = np.add.reduceat(np.add.reduceat(image, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, height)), np.diff(np.append(cols, width)))
    means = sums / counts.reshape(counts.shape + (1,) * (image.ndim - 2))
    return np.repeat(np.repeat(means, block, axis=0)[:height], block, axis=1)[:, :width]


def _compress(image: np.ndarray, quality: float, seed: int) -> np.ndarray:
    return dct_compress(image, quality)


_APPLY = {
    "saturation": _saturation,
    "contrast": _contrast,
    "block": _block,
    "multiplicative-noise": _multiplicative_noise,
    "motion-blur": _motion_blur,
    "pixelate": _pixelate,
    "compress": _compress,
}


def apply_perturbation(image: np.ndarray, spec: PerturbSpec) -> np.ndarray:
    out = _APPLY[spec.kind](image, spec.parameter, spec.seed)
    return np.clip(out, 0.0, 1.0)


def psnr(reference: np.ndarray, image: np.ndarray) -> float:
    mse = float(np.mean((reference - image) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def ladder_rows() -> List[Dict[str, str]]:
    rows = []
    for kind in KINDS:
        parameter, values = LADDERS[kind]
        for severity, value in enumerate(values, start=1):
            rows.append(
                {"kind": kind, "severity": str(severity), "parameter": parameter, "value": f"{value:g}"}
            )
    return rows


def ladder_csv() -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=("kind", "severity", "parameter", "value"), lineterminator="\n")
    writer.writeheader()
    writer.writerows(ladder_rows())
    return buffer.getvalue()


__all__ = [
    "DEFAULT_SEVERITY",
    "KINDS",
    "LADDERS",
    "PerturbSpec",
    "apply_perturbation",
    "ladder_csv",
    "ladder_rows",
    "psnr",
]
