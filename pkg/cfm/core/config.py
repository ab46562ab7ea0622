"""Typed configuration objects and the flat ``key=value`` file format.

Config files hold one ``key=value`` pair per line; ``#`` starts a comment.
Dotted keys address nested sections (``loss.d_ins=1.2``).  Sequence values
are comma separated (``train_families=A,B``).  Unknown keys are rejected.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Mapping, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

FAMILIES: Tuple[str, ...] = ("A", "B", "C", "D")
AUG_GROUPS: Tuple[str, ...] = ("high_frequency", "color", "noise", "identity")

ModelT = TypeVar("ModelT", bound=BaseModel)


def _split_sequence(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LossConfig(_Section):
    """Loss hyperparameters and term coefficients."""

    d_ins: float = Field(1.2, gt=0.0)
    s_pos: float = Field(0.8, ge=-1.0, le=1.0)
    s_neg: float = Field(-0.5, ge=-1.0, le=1.0)
    t_mask: float = Field(0.25, ge=0.0, le=1.0)
    uniform_tau: bool = False
    w_ce: float = Field(1.0, ge=0.0)
    w_ins: float = Field(1.0, ge=0.0)
    w_loc: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_thresholds(self) -> "LossConfig":
        if not self.s_pos > self.s_neg:
            raise ValueError(f"s_pos ({self.s_pos}) must exceed s_neg ({self.s_neg})")
        return self


class AugRanges(_Section):
    """Sampling ranges for the augmentation families."""

    group_probability: float = Field(0.5, ge=0.0, le=1.0)
    blur_sigma_min: float = Field(0.5, gt=0.0)
    blur_sigma_max: float = Field(2.0, gt=0.0)
    downscale_factors: Tuple[int, ...] = (2, 4)
    quality_min: int = Field(10, ge=10, le=90)
    quality_max: int = Field(90, ge=10, le=90)
    jitter_delta: float = Field(0.2, ge=0.0, le=1.0)
    hue_delta: float = Field(0.1, ge=0.0, le=0.5)
    noise_sigma_min: float = Field(0.01, ge=0.0)
    noise_sigma_max: float = Field(0.08, ge=0.0)
    grid_sizes: Tuple[int, ...] = (2, 4)

    @field_validator("downscale_factors", "grid_sizes", mode="before")
    @classmethod
    def _coerce_sizes(cls, value: Any) -> Any:
        return _split_sequence(value)

    @field_validator("downscale_factors", "grid_sizes")
    @classmethod
    def _positive_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(size < 1 for size in value):
            raise ValueError("sizes must be a non-empty list of positive integers")
        return value

    @model_validator(mode="after")
    def _check_bounds(self) -> "AugRanges":
        for low, high in (
            ("blur_sigma_min", "blur_sigma_max"),
            ("quality_min", "quality_max"),
            ("noise_sigma_min", "noise_sigma_max"),
        ):
            if getattr(self, low) > getattr(self, high):
                raise ValueError(f"{low} must not exceed {high}")
        return self


class ModelConfig(_Section):
    """Encoder channel plan and head widths."""

    image_size: int = Field(64, gt=0)
    channels: Tuple[int, ...] = (16, 32, 64)
    hidden: int = Field(64, gt=0)
    c_star: int = Field(16, gt=0)
    input_scale: float = Field(10.0, gt=0.0)

    @field_validator("channels", mode="before")
    @classmethod
    def _coerce_channels(cls, value: Any) -> Any:
        return _split_sequence(value)

    @model_validator(mode="after")
    def _check_plan(self) -> "ModelConfig":
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be a non-empty list of positive integers")
        if self.image_size % (2 ** len(self.channels)):
            raise ValueError(
                f"image_size {self.image_size} is not divisible by 2**{len(self.channels)}"
            )
        return self

    @property
    def feature_size(self) -> int:
        return self.image_size // 2 ** len(self.channels)

    @property
    def feature_channels(self) -> int:
        return self.channels[-1]


class SynthConfig(_Section):
    """Synthetic dataset generator settings."""

    seed: int = 0
    image_size: int = Field(64, ge=16)
    frames: int = Field(8, ge=3)
    sources: int = Field(40, ge=2)
    families: Tuple[str, ...] = FAMILIES
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    min_coverage: float = Field(0.02, ge=0.0, le=1.0)
    max_coverage: float = Field(0.40, ge=0.0, le=1.0)
    max_retries: int = Field(10, ge=1)

    @field_validator("families", mode="before")
    @classmethod
    def _coerce_families(cls, value: Any) -> Any:
        return _split_sequence(value)

    @field_validator("families")
    @classmethod
    def _known_families(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = sorted(set(value) - set(FAMILIES))
        if unknown or not value:
            raise ValueError(f"families must be drawn from {FAMILIES}, got {value}")
        return value


class TrainConfig(_Section):
    """Everything a training run depends on."""

    epochs: int = Field(10, gt=0)
    lr: float = Field(1e-3, gt=0.0)
    lr_decay: float = Field(0.5, gt=0.0, le=1.0)
    lr_step: int = Field(5, gt=0)
    weight_decay: float = Field(1e-5, ge=0.0)
    batch_size: int = Field(8, gt=0)
    triplets_per_video: int = Field(1, gt=0)
    alpha: float = Field(0.99, ge=0.0, le=1.0)
    beta: float = Field(0.99, ge=0.0, le=1.0)
    seed: int = 0
    use_aug: bool = True
    use_isl: bool = True
    use_lsl: bool = True
    use_plc: bool = True
    mask_strategy: Literal["plc", "random"] = "plc"
    random_mask_ratio: float = Field(0.5, ge=0.0, le=0.5)
    invert_importance: bool = False
    paired_aug: bool = True
    aug_groups: Tuple[str, ...] = AUG_GROUPS
    lsl_branch: Literal["teacher", "student"] = "teacher"
    local_head_input: Literal["unmasked", "masked"] = "unmasked"
    train_families: Tuple[str, ...] = FAMILIES
    min_frame_gap: int = Field(1, ge=1)
    loss: LossConfig = Field(default_factory=LossConfig)
    aug: AugRanges = Field(default_factory=AugRanges)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @field_validator("aug_groups", "train_families", mode="before")
    @classmethod
    def _coerce_lists(cls, value: Any) -> Any:
        return _split_sequence(value)

    @field_validator("aug_groups")
    @classmethod
    def _known_groups(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = sorted(set(value) - set(AUG_GROUPS))
        if unknown:
            raise ValueError(f"unknown augmentation groups {unknown}; expected {AUG_GROUPS}")
        return value

    @field_validator("train_families")
    @classmethod
    def _known_train_families(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        unknown = sorted(set(value) - set(FAMILIES))
        if unknown or not value:
            raise ValueError(f"train_families must be drawn from {FAMILIES}, got {value}")
        return value

    def with_overrides(self, overrides: Mapping[str, str] | Iterable[str]) -> "TrainConfig":
        return apply_overrides(self, overrides)


# key=value format ----------------------------------------------------------


def parse_pairs(lines: Iterable[str], *, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key=value`` lines into a flat mapping, later keys winning."""

    pairs: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        pairs[key] = value
    return pairs


def _nest(pairs: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in pairs.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key '{key}' conflicts with scalar '{part}'")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"key '{key}' conflicts with section '{key}.*'")
        node[parts[-1]] = value
    return tree


def _flatten(values: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in values.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _describe(exc: ValidationError) -> str:
    problems = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error.get("loc", ()))
        problems.append(f"{location or '<root>'}: {error.get('msg')}")
    return "; ".join(problems)


def build_config(model: Type[ModelT], pairs: Mapping[str, Any]) -> ModelT:
    """Validate flat dotted ``pairs`` into ``model``."""

    try:
        return model.model_validate(_nest(pairs))
    except ValidationError as exc:
        raise ConfigError(f"invalid {model.__name__}: {_describe(exc)}") from exc


def parse_overrides(overrides: Iterable[str]) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if not key:
            raise ConfigError(f"override {item!r} has an empty key")
        pairs[key] = value
    return pairs


def apply_overrides(config: ModelT, overrides: Mapping[str, str] | Iterable[str]) -> ModelT:
    """Return a copy of ``config`` with dotted ``overrides`` applied."""

    extra = dict(overrides) if isinstance(overrides, Mapping) else parse_overrides(overrides)
    if not extra:
        return config
    merged = _flatten(config.model_dump())
    merged.update(extra)
    return build_config(type(config), merged)


def load_config(
    path: Path | None,
    overrides: Iterable[str] = (),
    *,
    model: Type[ModelT] = TrainConfig,  # type: ignore[assignment]
) -> ModelT:
    """Load ``path`` (or the defaults when ``None``) and apply ``overrides``."""

    pairs: Dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        pairs.update(parse_pairs(text.splitlines(), source=str(path)))
    pairs.update(parse_overrides(overrides))
    config = build_config(model, pairs)
    logger.debug("Loaded %s from %s with %d key(s)", model.__name__, path or "defaults", len(pairs))
    return config


def dump_config(config: BaseModel) -> str:
    """Render ``config`` in the key=value format :func:`load_config` reads."""

    lines: List[str] = []
    for key, value in _flatten(config.model_dump()).items():
        lines.append(f"{key}={_format_value(value)}")
    return "\n".join(lines) + "\n"


__all__ = [
    "AUG_GROUPS",
    "AugRanges",
    "FAMILIES",
    "LossConfig",
    "ModelConfig",
    "SynthConfig",
    "TrainConfig",
    "apply_overrides",
    "build_config",
    "dump_config",
    "load_config",
    "parse_overrides",
    "parse_pairs",
]
