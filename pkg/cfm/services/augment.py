"""Prior-knowledge-agnostic augmentation.

An :class:`AugSpec` is an ordered list of fully parameterized operations.
Every random choice, including the noise field and the grid permutation, is
made by :func:`sample_aug_spec` and stored in the spec, so applying one spec
to two images degrades both in exactly the same way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Mapping, Tuple

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn
from skimage import color, transform

from cfm.core.config import AUG_GROUPS, AugRanges
from cfm.core.errors import AugmentError

logger = logging.getLogger(__name__)

BLOCK = 8
OP_ORDER = ("blur", "downscale", "compress", "jitter", "noise", "shuffle")

LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class AugOp:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class AugSpec:
    ops: Tuple[AugOp, ...] = ()

    def __post_init__(self) -> None:
        for op in self.ops:
            _validate_op(op)

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(op.name for op in self.ops)

    def describe(self) -> str:
        if not self.ops:
            return "identity"
        parts = []
        for op in self.ops:
            args = ",".join(f"{key}={value:.4g}" if isinstance(value, float) else f"{key}={value}"
                            for key, value in op.params.items())
            parts.append(f"{op.name}({args})")
        return " > ".join(parts)


def _validate_op(op: AugOp) -> None:
    p = op.params
    try:
        if op.name == "blur":
            ok = p["sigma"] > 0
        elif op.name == "downscale":
            ok = int(p["factor"]) >= 1
        elif op.name == "compress":
            ok = 10 <= p["quality"] <= 90
        elif op.name == "jitter":
            ok = all(-1.0 <= p[key] <= 1.0 for key in ("brightness", "contrast", "saturation")) and (
                -0.5 <= p["hue"] <= 0.5
            )
        elif op.name == "noise":
            ok = p["sigma"] >= 0 and "seed" in p
        elif op.name == "shuffle":
            ok = int(p["grid"]) >= 1 and "seed" in p
        else:
            raise AugmentError(f"unknown augmentation {op.name!r}; expected one of {OP_ORDER}")
    except KeyError as exc:
        raise AugmentError(f"augmentation {op.name!r} missing parameter {exc.args[0]!r}") from exc
    if not ok:
        raise AugmentError(f"augmentation {op.name!r} parameters out of range: {dict(p)}")


# primitives ----------------------------------------------------------------


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0.0), mode="reflect")


def downscale(image: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear down by ``factor`` and back up to the original size."""

    height, width = image.shape[:2]
    factor = int(factor)
    if factor == 1:
        return image.copy()
    small_shape = (max(1, height // factor), max(1, width // factor)) + image.shape[2:]
    small = transform.resize(image, small_shape, order=1, mode="edge", anti_aliasing=False)
    return transform.resize(small, image.shape, order=1, mode="edge", anti_aliasing=False)


def quality_scale(quality: float) -> float:
    return 50.0 / quality if quality < 50 else 2.0 - quality / 50.0


def quantization_table(quality: float) -> np.ndarray:
    scaled = np.floor(LUMINANCE_TABLE * quality_scale(quality) + 0.5)
    return np.maximum(scaled, 1.0)


def dct_compress(image: np.ndarray, quality: float) -> np.ndarray:
    """Block-DCT quantization surrogate for JPEG at ``quality``."""

    if not 10 <= quality <= 90:
        raise AugmentError(f"compression quality {quality} outside [10, 90]")
    table = quantization_table(quality)
    height, width = image.shape[:2]
    pad_h = (-height) % BLOCK
    pad_w = (-width) % BLOCK
    pad = ((0, pad_h), (0, pad_w)) + ((0, 0),) * (image.ndim - 2)
    padded = np.pad(image, pad, mode="edge") * 255.0 - 128.0
    planes = padded if padded.ndim == 3 else padded[..., None]
    ph, pw, channels = planes.shape
    blocks = planes.reshape(ph // BLOCK, BLOCK, pw // BLOCK, BLOCK, channels).transpose(0, 2, 4, 1, 3)
    coefficients = dctn(blocks, type=2, axes=(-2, -1), norm="ortho")
    quantized = np.round(coefficients / table) * table
    restored = idctn(quantized, type=2, axes=(-2, -1), norm="ortho")
    planes = restored.transpose(0, 3, 1, 4, 2).reshape(ph, pw, channels)
    out = (planes + 128.0) / 255.0
    out = out[:height, :width]
    if image.ndim == 2:
        out = out[..., 0]
    return np.clip(out, 0.0, 1.0)


def color_jitter(
    image: np.ndarray,
    brightness: float = 0.0,
    contrast: float = 0.0,
    saturation: float = 0.0,
    hue: float = 0.0,
) -> np.ndarray:
    out = np.clip(image * (1.0 + brightness), 0.0, 1.0)
    grey = out.mean()
    out = np.clip(grey + (out - grey) * (1.0 + contrast), 0.0, 1.0)
    if saturation or hue:
        hsv = color.rgb2hsv(out)
        hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + saturation), 0.0, 1.0)
        hsv[..., 0] = np.mod(hsv[..., 0] + hue, 1.0)
        out = color.hsv2rgb(hsv)
    return out


def gaussian_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return image + rng.normal(0.0, sigma, size=image.shape)


def grid_shuffle(image: np.ndarray, grid: int, rng: np.random.Generator | int) -> np.ndarray:
    """Permute the ``grid x grid`` equal cells of ``image``."""

    grid = int(grid)
    height, width = image.shape[:2]
    if grid < 1 or height % grid or width % grid:
        raise AugmentError(f"image {height}x{width} cannot be split into a {grid}x{grid} grid")
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    order = generator.permutation(grid * grid)
    ch, cw = height // grid, width // grid
    cells = [
        image[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw]
        for r in range(grid)
        for c in range(grid)
    ]
    out = np.empty_like(image)
    for position, source in enumerate(order):
        r, c = divmod(position, grid)
        out[r * ch : (r + 1) * ch, c * cw : (c + 1) * cw] = cells[source]
    return out


_APPLY: Dict[str, Callable[..., np.ndarray]] = {
    "blur": lambda image, sigma: gaussian_blur(image, sigma),
    "downscale": lambda image, factor: downscale(image, factor),
    "compress": lambda image, quality: dct_compress(image, quality),
    "jitter": lambda image, **deltas: color_jitter(image, **deltas),
    "noise": lambda image, sigma, seed: gaussian_noise(image, sigma, seed),
    "shuffle": lambda image, grid, seed: grid_shuffle(image, grid, seed),
}


def apply_aug(image: np.ndarray, spec: AugSpec) -> np.ndarray:
    """Apply ``spec`` in order and clamp; the empty spec is the identity."""

    if not spec.ops:
        return image.copy()
    out = image
    for op in spec.ops:
        out = np.clip(_APPLY[op.name](out, **op.params), 0.0, 1.0)
    return out


# sampling ------------------------------------------------------------------


def sample_aug_spec(
    rng: np.random.Generator,
    ranges: AugRanges | None = None,
    groups: Iterable[str] = AUG_GROUPS,
) -> AugSpec:
    """Draw one spec; each group in ``groups`` fires independently.

    A coin is drawn for all four groups on every call so the stream position
    does not depend on which groups are enabled.
    """

    ranges = ranges or AugRanges()
    enabled = set(groups)
    unknown = enabled - set(AUG_GROUPS)
    if unknown:
        raise AugmentError(f"unknown augmentation groups {sorted(unknown)}")
    coins = rng.random(len(AUG_GROUPS)) < ranges.group_probability
    fired = {group for group, coin in zip(AUG_GROUPS, coins) if coin and group in enabled}

    ops = []
    if "high_frequency" in fired:
        choice = int(rng.integers(3))
        if choice == 0:
            ops.append(AugOp("blur", {"sigma": float(rng.uniform(ranges.blur_sigma_min, ranges.blur_sigma_max))}))
        elif choice == 1:
            ops.append(AugOp("downscale", {"factor": int(rng.choice(ranges.downscale_factors))}))
        else:
            quality = int(rng.integers(ranges.quality_min, ranges.quality_max + 1))
            ops.append(AugOp("compress", {"quality": quality}))
    if "color" in fired:
        jd, hd = ranges.jitter_delta, ranges.hue_delta
        brightness, contrast, saturation = (float(v) for v in rng.uniform(-jd, jd, size=3))
        ops.append(
            AugOp(
                "jitter",
                {
                    "brightness": brightness,
                    "contrast": contrast,
                    "saturation": saturation,
                    "hue": float(rng.uniform(-hd, hd)),
                },
            )
        )
    if "noise" in fired:
        sigma = float(rng.uniform(ranges.noise_sigma_min, ranges.noise_sigma_max))
        ops.append(AugOp("noise", {"sigma": sigma, "seed": int(rng.integers(2**31))}))
    if "identity" in fired:
        grid = int(rng.choice(ranges.grid_sizes))
        ops.append(AugOp("shuffle", {"grid": grid, "seed": int(rng.integers(2**31))}))
    return AugSpec(tuple(ops))


def spec_groups(spec: AugSpec) -> Tuple[str, ...]:
    """Groups represented in ``spec``, in canonical order."""

    names = set(spec.names)
    groups = []
    if names & {"blur", "downscale", "compress"}:
        groups.append("high_frequency")
    if "jitter" in names:
        groups.append("color")
    if "noise" in names:
        groups.append("noise")
    if "shuffle" in names:
        groups.append("identity")
    return tuple(groups)


__all__ = [
    "AugOp",
    "AugSpec",
    "LUMINANCE_TABLE",
    "OP_ORDER",
    "apply_aug",
    "color_jitter",
    "dct_compress",
    "downscale",
    "gaussian_blur",
    "gaussian_noise",
    "grid_shuffle",
    "quality_scale",
    "quantization_table",
    "sample_aug_spec",
    "spec_groups",
]
