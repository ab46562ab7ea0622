"""Checkpoint directories.

Layout::

    <ckpt>/metadata.csv            key,value (format version, position, optimizer scalars)
    <ckpt>/config.cfg              TrainConfig in key=value form
    <ckpt>/student/<param>.cfmt    student parameters
    <ckpt>/teacher/<param>.cfmt    teacher parameters (no classifier)
    <ckpt>/optim/m.<param>.cfmt    Adam first moments
    <ckpt>/optim/v.<param>.cfmt    Adam second moments
    <ckpt>/plc/m_star.cfmt         EMA channel importance (when initialized)
    <ckpt>/plc/mask.cfmt           current keep-mask as 0/1 (when set)

Every snapshot uses the ``CFMT`` tensor format from :mod:`cfm.core.snapshot`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from cfm.core.config import ModelConfig, TrainConfig, dump_config, load_config
from cfm.core.errors import CheckpointError, ConfigError
from cfm.core.optim import AdamState, moments_by_name
from cfm.core.snapshot import read_snapshot, write_snapshot
from cfm.core.tensor import Tensor

from .model import CfmModel
from .plc import ProgressiveController

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
METADATA_NAME = "metadata.csv"
CONFIG_NAME = "config.cfg"


@dataclass
class Checkpoint:
    model: CfmModel
    adam: AdamState
    config: TrainConfig
    plc: Optional[ProgressiveController] = None
    epoch: int = 0
    batch_index: int = 0
    iteration: int = 0

    @property
    def finished(self) -> bool:
        return self.epoch >= self.config.epochs


def build_controller(config: TrainConfig) -> Optional[ProgressiveController]:
    if not config.use_plc:
        return None
    return ProgressiveController(
        config.model.feature_channels,
        beta=config.beta,
        strategy=config.mask_strategy,
        invert_importance=config.invert_importance,
        random_ratio=config.random_mask_ratio,
        seed=config.seed,
    )


def _file_name(name: str) -> str:
    return f"{name}.cfmt"


def _write_metadata(path: Path, values: Dict[str, str]) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("key", "value"))
        for key, value in values.items():
            writer.writerow((key, value))


def _read_metadata(path: Path) -> Dict[str, str]:
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != ("key", "value"):
                raise CheckpointError(f"{path}: header must be key,value")
            return {row["key"]: row["value"] for row in reader}
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    root = Path(path)
    for sub in ("student", "teacher", "optim", "plc"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    model = checkpoint.model
    for name, tensor in model.student.items():
        write_snapshot(root / "student" / _file_name(name), tensor.data)
    for name, tensor in model.teacher.items():
        write_snapshot(root / "teacher" / _file_name(name), tensor.data)
    adam = checkpoint.adam
    names = [name for name, _ in model.named_parameters()]
    for key, buffer in moments_by_name(names, adam).items():
        write_snapshot(root / "optim" / _file_name(key), buffer)

    metadata = {
        "format_version": str(FORMAT_VERSION),
        "epoch": str(checkpoint.epoch),
        "batch_index": str(checkpoint.batch_index),
        "iteration": str(checkpoint.iteration),
        "adam_step": str(adam.step),
        "adam_lr": repr(adam.lr),
        "plc": "on" if checkpoint.plc is not None else "off",
    }
    plc_buffers: Dict[str, np.ndarray] = {}
    if checkpoint.plc is not None:
        state = checkpoint.plc.state
        metadata["rho"] = repr(state.rho)
        if state.m_star is not None:
            plc_buffers["m_star"] = state.m_star
        if state.current_mask is not None:
            plc_buffers["mask"] = state.current_mask.astype(np.float64)
    for name in ("m_star", "mask"):
        target = root / "plc" / _file_name(name)
        if name in plc_buffers:
            write_snapshot(target, plc_buffers[name])
        elif target.exists():
            # left over from an earlier save into the same directory
            target.unlink()
    _write_metadata(root / METADATA_NAME, metadata)
    (root / CONFIG_NAME).write_text(dump_config(checkpoint.config), encoding="utf-8")
    logger.info("Saved checkpoint at iteration %d to %s", checkpoint.iteration, root)
    return root


def _load_into(directory: Path, params: Dict[str, Tensor], what: str) -> None:
    for name, tensor in params.items():
        array = read_snapshot(directory / _file_name(name))
        if array.shape != tensor.shape:
            raise CheckpointError(
                f"{what} parameter {name}: checkpoint shape {array.shape}, architecture expects {tensor.shape}"
            )
        tensor.data[...] = array


def load_checkpoint(path: Path, *, expected: Optional[ModelConfig] = None) -> Checkpoint:
    """Restore everything :func:`save_checkpoint` wrote.

    ``expected`` rejects checkpoints whose architecture differs from it.
    """

    root = Path(path)
    if not root.is_dir():
        raise CheckpointError(f"checkpoint directory {root} does not exist")
    metadata = _read_metadata(root / METADATA_NAME)
    version = metadata.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointError(f"{root}: format version {version!r}, expected {FORMAT_VERSION}")
    try:
        config = load_config(root / CONFIG_NAME)
    except ConfigError as exc:
        raise CheckpointError(f"{root}: unusable config ({exc})") from exc
    if expected is not None and expected != config.model:
        raise CheckpointError(
            f"{root}: architecture {config.model.model_dump()} does not match {expected.model_dump()}"
        )

    model = CfmModel(config.model, seed=config.seed)
    _load_into(root / "student", model.student, "student")
    _load_into(root / "teacher", model.teacher, "teacher")

    try:
        adam = AdamState(
            lr=float(metadata["adam_lr"]),
            weight_decay=config.weight_decay,
            step=int(metadata["adam_step"]),
        )
        epoch = int(metadata["epoch"])
        batch_index = int(metadata["batch_index"])
        iteration = int(metadata["iteration"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{root}: incomplete metadata ({exc})") from exc
    if adam.step:
        for name, tensor in model.named_parameters():
            m = read_snapshot(root / "optim" / _file_name(f"m.{name}"))
            v = read_snapshot(root / "optim" / _file_name(f"v.{name}"))
            if m.shape != tensor.shape or v.shape != tensor.shape:
                raise CheckpointError(f"{root}: optimizer moments for {name} have the wrong shape")
            adam.first_moments.append(m)
            adam.second_moments.append(v)
    else:
        adam.first_moments = [np.zeros_like(t.data) for t in model.parameters()]
        adam.second_moments = [np.zeros_like(t.data) for t in model.parameters()]

    controller = build_controller(config)
    if (controller is None) != (metadata.get("plc") == "off"):
        raise CheckpointError(f"{root}: PLC state does not match use_plc={config.use_plc}")
    if controller is not None:
        controller.state.rho = float(metadata.get("rho", "0.0"))
        m_star_path = root / "plc" / _file_name("m_star")
        if m_star_path.exists():
            controller.state.m_star = read_snapshot(m_star_path)
        mask_path = root / "plc" / _file_name("mask")
        if mask_path.exists():
            controller.state.current_mask = read_snapshot(mask_path) > 0.5

    return Checkpoint(
        model=model,
        adam=adam,
        config=config,
        plc=controller,
        epoch=epoch,
        batch_index=batch_index,
        iteration=iteration,
    )


__all__ = [
    "CONFIG_NAME",
    "Checkpoint",
    "FORMAT_VERSION",
    "METADATA_NAME",
    "build_controller",
    "load_checkpoint",
    "save_checkpoint",
]
