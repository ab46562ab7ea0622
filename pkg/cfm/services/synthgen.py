"""Procedural real/fake "videos" with known manipulated regions.

A real video is rendered from a seeded scene: an oversized canvas holding a
smooth skin-tone field, a soft face layout and a fine grain texture.  Each
frame crops the canvas at a slowly drifting offset and applies a small
brightness drift, then quantizes to 8 bits.  A fake re-renders a manipulated
copy of the same canvas through the same drift and pastes it inside an
elliptical region, so pixels outside the region equal the real frame exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from skimage import color, draw

from cfm.core.config import FAMILIES, SynthConfig
from cfm.core.errors import DatasetError

logger = logging.getLogger(__name__)

Seed = Union[int, Sequence[int]]

GRAIN_AMPLITUDE = 0.07
PRIMITIVE_SMOOTHING = 1.0
AXIS_RANGE = (0.2, 0.34)


@dataclass
class Scene:
    """Everything needed to re-render frames of a video."""

    canvas: np.ndarray
    margin: int
    offsets: List[Tuple[int, int]]
    gains: List[float]

    def render(self, canvas: Optional[np.ndarray] = None) -> List[np.ndarray]:
        source = self.canvas if canvas is None else canvas
        return [self.crop(source, k) * gain for k, gain in enumerate(self.gains)]

    def crop(self, array: np.ndarray, k: int) -> np.ndarray:
        dy, dx = self.offsets[k]
        size = self.canvas.shape[0] - 2 * self.margin
        top, left = self.margin + dy, self.margin + dx
        return array[top : top + size, left : left + size]


@dataclass
class SynthVideo:
    id: str
    frames: List[np.ndarray]
    label: str
    family: str = "none"
    masks: Optional[List[np.ndarray]] = None
    source_id: Optional[str] = None
    scene: Optional[Scene] = field(default=None, repr=False, compare=False)

    @property
    def is_fake(self) -> bool:
        return self.label == "fake"

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the 8-bit grid."""

    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def _smooth_field(rng: np.random.Generator, size: int, bumps: int = 6) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field_ = np.zeros((size, size))
    for _ in range(bumps):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(0.15, 0.4) * size
        amplitude = rng.uniform(-0.08, 0.08)
        field_ += amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return field_


def _face_layout(rng: np.random.Generator, size: int, image_size: int) -> np.ndarray:
    """Soft-edged eyes, nose and mouth as an additive RGB layer."""

    layer = np.zeros((size, size, 3))
    centre = size / 2.0 + rng.uniform(-0.04, 0.04, size=2) * image_size
    eye_dy = rng.uniform(0.10, 0.14) * image_size
    eye_dx = rng.uniform(0.14, 0.18) * image_size
    eye_radius = rng.uniform(0.05, 0.07) * image_size
    eye_tone = -rng.uniform(0.10, 0.16) * np.array([1.0, 1.0, 0.9])
    for side in (-1.0, 1.0):
        rr, cc = draw.disk((centre[0] - eye_dy, centre[1] + side * eye_dx), eye_radius, shape=(size, size))
        layer[rr, cc] += eye_tone

    nose_h = rng.uniform(0.12, 0.18) * image_size
    nose_w = rng.uniform(0.06, 0.09) * image_size
    rows = np.array([centre[0] - nose_h / 2, centre[0] + nose_h / 2, centre[0] + nose_h / 2])
    cols = np.array([centre[1], centre[1] - nose_w, centre[1] + nose_w])
    rr, cc = draw.polygon(rows, cols, shape=(size, size))
    layer[rr, cc] += rng.uniform(0.06, 0.1) * np.array([1.0, 0.9, 0.8])

    mouth_y = centre[0] + rng.uniform(0.2, 0.26) * image_size
    rr, cc = draw.ellipse(
        mouth_y,
        centre[1],
        rng.uniform(0.03, 0.05) * image_size,
        rng.uniform(0.1, 0.15) * image_size,
        shape=(size, size),
    )
    layer[rr, cc] += rng.uniform(0.08, 0.12) * np.array([0.6, -0.8, -0.8])
    return ndimage.gaussian_filter(layer, sigma=(PRIMITIVE_SMOOTHING, PRIMITIVE_SMOOTHING, 0.0))


def _build_scene(rng: np.random.Generator, image_size: int, frames: int) -> Scene:
    margin = max(2, image_size // 8)
    size = image_size + 2 * margin
    skin = np.array([rng.uniform(0.55, 0.72), rng.uniform(0.40, 0.52), rng.uniform(0.30, 0.42)])
    canvas = np.broadcast_to(skin, (size, size, 3)).copy()
    canvas += _smooth_field(rng, size)[..., None] * np.array([1.0, 0.9, 0.8])
    canvas += _face_layout(rng, size, image_size)
    grain = GRAIN_AMPLITUDE * np.tanh(3.0 * rng.standard_normal((size, size)))
    canvas += grain[..., None]
    canvas = np.clip(canvas, 0.0, 1.0)

    drift = rng.uniform(-margin / 2.0, margin / 2.0, size=2)
    gain_drift = rng.uniform(-0.04, 0.04)
    offsets = []
    gains = []
    for k in range(frames):
        t = k / (frames - 1)
        offsets.append((int(round(drift[0] * t)), int(round(drift[1] * t))))
        gains.append(1.0 + gain_drift * t)
    return Scene(canvas=canvas, margin=margin, offsets=offsets, gains=gains)


def generate_real_video(
    seed: Seed,
    config: SynthConfig | None = None,
    *,
    video_id: str | None = None,
) -> SynthVideo:
    """Render a real video from ``seed``."""

    config = config or SynthConfig()
    if config.frames < 3:
        raise DatasetError(f"a video needs at least 3 frames, got {config.frames}")
    rng = np.random.default_rng(seed)
    scene = _build_scene(rng, config.image_size, config.frames)
    frames = [quantize(frame) for frame in scene.render()]
    if video_id is None:
        video_id = f"v{seed:04d}" if isinstance(seed, int) else "v" + "_".join(str(s) for s in seed)
    return SynthVideo(id=video_id, frames=frames, label="real", scene=scene)


# manipulation families -----------------------------------------------------


def _texture_replace(canvas: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    region_mean = canvas[mask].mean(axis=0)
    yy, xx = np.mgrid[0 : canvas.shape[0], 0 : canvas.shape[1]].astype(np.float64)
    frequency = rng.uniform(0.15, 0.35)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amplitude = rng.uniform(0.12, 0.18)
    tint = rng.uniform(0.6, 1.0, size=3)
    pattern = amplitude * np.sin(frequency * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
    return region_mean + pattern[..., None] * tint


def _local_blur(canvas: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sigma = rng.uniform(2.5, 3.5)
    return ndimage.gaussian_filter(canvas, sigma=(sigma, sigma, 0.0))


def _hue_contrast_shift(canvas: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    shift = rng.uniform(0.05, 0.1) * rng.choice([-1.0, 1.0])
    hsv = color.rgb2hsv(np.clip(canvas, 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    shifted = color.hsv2rgb(hsv)
    # restore the per-pixel channel mean
    shifted += (canvas.mean(axis=-1) - shifted.mean(axis=-1))[..., None]
    factor = rng.choice([rng.uniform(0.65, 0.8), rng.uniform(1.2, 1.35)])
    region_mean = shifted[mask].mean(axis=0)
    return region_mean + (shifted - region_mean) * factor


def _smooth_warp(canvas: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    amplitude = rng.uniform(2.5, 4.0)
    wavelength = rng.uniform(0.4, 0.7) * size
    phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
    dy = amplitude * np.sin(2.0 * np.pi * xx / wavelength + phases[0])
    dx = amplitude * np.cos(2.0 * np.pi * yy / wavelength + phases[1])
    coords = np.stack([yy + dy, xx + dx])
    return np.stack(
        [ndimage.map_coordinates(canvas[..., c], coords, order=1, mode="nearest") for c in range(3)],
        axis=-1,
    )


MANIPULATIONS: Dict[str, Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]] = {
    "A": _texture_replace,
    "B": _local_blur,
    "C": _hue_contrast_shift,
    "D": _smooth_warp,
}


def _sample_region(
    rng: np.random.Generator, scene: Scene, config: SynthConfig
) -> Tuple[np.ndarray, List[np.ndarray]]:
    size = scene.canvas.shape[0]
    image_size = size - 2 * scene.margin
    for attempt in range(1, config.max_retries + 1):
        centre = scene.margin + rng.uniform(0.3, 0.7, size=2) * image_size
        axes = rng.uniform(*AXIS_RANGE, size=2) * image_size
        rotation = rng.uniform(-np.pi / 2, np.pi / 2)
        canvas_mask = np.zeros((size, size), dtype=bool)
        rr, cc = draw.ellipse(centre[0], centre[1], axes[0], axes[1], shape=(size, size), rotation=rotation)
        canvas_mask[rr, cc] = True
        frame_masks = [scene.crop(canvas_mask, k).copy() for k in range(len(scene.offsets))]
        coverage = [mask.mean() for mask in frame_masks]
        if all(config.min_coverage <= value <= config.max_coverage for value in coverage):
            return canvas_mask, frame_masks
        logger.debug("Region attempt %d rejected (coverage %.3f-%.3f)", attempt, min(coverage), max(coverage))
    raise DatasetError(f"no region with coverage in [{config.min_coverage}, {config.max_coverage}] "
                       f"after {config.max_retries} attempts")


def manipulate_video(
    real: SynthVideo,
    family: str,
    seed: Seed,
    config: SynthConfig | None = None,
) -> SynthVideo:
    """Derive the family ``family`` fake of ``real``."""

    config = config or SynthConfig()
    if family not in MANIPULATIONS:
        raise DatasetError(f"unknown manipulation family {family!r}; expected one of {FAMILIES}")
    if real.label != "real" or real.scene is None:
        raise DatasetError(f"video {real.id} is not a generated real video")

    rng = np.random.default_rng(seed)
    scene = real.scene
    canvas_mask, frame_masks = _sample_region(rng, scene, config)
    manipulated = np.clip(MANIPULATIONS[family](scene.canvas, canvas_mask, rng), 0.0, 1.0)

    frames = []
    for real_frame, fake_frame, mask in zip(real.frames, scene.render(manipulated), frame_masks):
        frames.append(np.where(mask[..., None], quantize(fake_frame), real_frame))
    return SynthVideo(
        id=f"{real.id}_{family}",
        frames=frames,
        label="fake",
        family=family,
        masks=frame_masks,
        source_id=real.id,
    )


def generate_videos(config: SynthConfig) -> List[SynthVideo]:
    """Every real source followed by its fakes, in a fixed order."""

    videos: List[SynthVideo] = []
    for source in range(config.sources):
        real = generate_real_video([config.seed, source], config, video_id=f"v{source:04d}")
        videos.append(real)
        for family in config.families:
            family_index = FAMILIES.index(family) + 1
            videos.append(manipulate_video(real, family, [config.seed, source, family_index], config))
    logger.info("Generated %d videos from %d sources", len(videos), config.sources)
    return videos


def held_out_sources(config: SynthConfig) -> List[str]:
    """Source ids assigned to the test split, by a seeded shuffle."""

    rng = np.random.default_rng([config.seed, 7919])
    order = rng.permutation(config.sources)
    count = max(1, int(round(config.sources * config.test_fraction)))
    return sorted(f"v{source:04d}" for source in order[:count])


__all__ = [
    "MANIPULATIONS",
    "Scene",
    "SynthVideo",
    "generate_real_video",
    "generate_videos",
    "manipulate_video",
    "quantize",
    "held_out_sources",
]
