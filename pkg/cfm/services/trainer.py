"""The CFM training loop.

One iteration builds a batch of triplets, encodes the anchor with the student
and positive/negative with the teacher, updates the channel importance and
mask, evaluates the enabled objectives, takes an Adam step and moves the
teacher towards the student.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from cfm.core.config import TrainConfig
from cfm.core.errors import DatasetError, TrainingError
from cfm.core.optim import AdamState, adam_step, step_decay_lr
from cfm.core.tensor import Tensor, backward, get_tape

from .checkpoint import Checkpoint, build_controller, save_checkpoint
from .dataset import VideoCatalog
from .losses import ce_loss, compute_local_loss, instance_loss, total_loss, zero_loss
from .model import STUDENT, TEACHER, CfmModel
from .plc import channel_importance
from .triplet import TripletBatch, TripletOptions, build_triplet, stack_batch

logger = logging.getLogger(__name__)

TELEMETRY_FIELDS = ("iteration", "epoch", "lr", "rho", "change_ratio", "l_ce", "l_ins", "l_loc", "l_total")
CHANGE_RATIO_FIELDS = ("iteration", "rho", "change_ratio")
TELEMETRY_NAME = "telemetry.csv"
CHANGE_RATIO_NAME = "change_ratio.csv"
CHECKPOINT_NAME = "checkpoint"


@dataclass
class TelemetryRow:
    iteration: int
    epoch: int
    lr: float
    rho: float
    change_ratio: float
    l_ce: float
    l_ins: float
    l_loc: float
    l_total: float

    def as_csv(self) -> Dict[str, str]:
        return {
            "iteration": str(self.iteration),
            "epoch": str(self.epoch),
            "lr": repr(self.lr),
            "rho": repr(self.rho),
            "change_ratio": repr(self.change_ratio),
            "l_ce": repr(self.l_ce),
            "l_ins": repr(self.l_ins),
            "l_loc": repr(self.l_loc),
            "l_total": repr(self.l_total),
        }


@dataclass
class LossTerms:
    l_ce: Tensor
    l_ins: Tensor
    l_loc: Tensor
    change_ratio: float = float("nan")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    telemetry: List[TelemetryRow] = field(default_factory=list)

    def epoch_means(self, column: str) -> Dict[int, float]:
        grouped: Dict[int, List[float]] = {}
        for row in self.telemetry:
            grouped.setdefault(row.epoch, []).append(getattr(row, column))
        return {epoch: float(np.mean(values)) for epoch, values in grouped.items()}


def train_anchor_ids(dataset: VideoCatalog, config: TrainConfig) -> List[str]:
    """Train-split videos usable as anchors under ``config.train_families``."""

    manifest = dataset.manifest
    entries = manifest.split("train", config.train_families)
    anchors = [entry.id for entry in entries if manifest.counterparts(entry.id, config.train_families)]
    labels = {manifest.get(video_id).label for video_id in anchors}
    if labels != {"real", "fake"}:
        raise DatasetError(
            f"train split needs real and fake videos in families {config.train_families}, found {sorted(labels)}"
        )
    return anchors


class Trainer:
    """Owns the model, optimizer and mask controller for one run."""

    def __init__(self, dataset: VideoCatalog, config: TrainConfig, checkpoint: Optional[Checkpoint] = None):
        self.dataset = dataset
        self.config = config
        self.options = TripletOptions.from_config(config)
        self.anchors = train_anchor_ids(dataset, config)
        if checkpoint is None:
            model = CfmModel(config.model, seed=config.seed)
            adam = AdamState.for_params(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
            checkpoint = Checkpoint(model=model, adam=adam, config=config, plc=build_controller(config))
        self.state = checkpoint
        self.telemetry: List[TelemetryRow] = []

    @property
    def model(self) -> CfmModel:
        return self.state.model

    # batches ---------------------------------------------------------------

    def epoch_order(self, epoch: int) -> List[str]:
        """Every anchor ``triplets_per_video`` times, shuffled per epoch."""

        pool = self.anchors * self.config.triplets_per_video
        rng = np.random.default_rng([self.config.seed, epoch])
        return [pool[k] for k in rng.permutation(len(pool))]

    def batch_count(self) -> int:
        return math.ceil(len(self.anchors) * self.config.triplets_per_video / self.config.batch_size)

    def build_batch(self, epoch: int, batch_index: int) -> TripletBatch:
        order = self.epoch_order(epoch)
        start = batch_index * self.config.batch_size
        samples = []
        for position in range(start, min(start + self.config.batch_size, len(order))):
            rng = np.random.default_rng([self.config.seed, epoch, position])
            samples.append(build_triplet(self.dataset, order[position], rng, self.options))
        return stack_batch(samples)

    # one iteration ---------------------------------------------------------

    def _masked(self, features: Tensor) -> Tensor:
        return features if self.state.plc is None else self.state.plc.apply(features)

    def forward_losses(self, batch: TripletBatch, *, observe: bool = True) -> LossTerms:
        """Evaluate the enabled objectives on ``batch``.

        With ``observe`` the channel importance of the batch is folded into the
        controller and the mask refreshed before masking; without it the current
        mask is used as is.
        """

        config = self.config
        model = self.model
        controller = self.state.plc

        needs_triplet = config.use_isl or config.use_lsl or config.use_plc
        f_anc = model.encode(STUDENT, batch.anchors)
        f_pos = f_neg = None
        if needs_triplet:
            f_pos = model.encode(TEACHER, batch.positives)
            f_neg = model.encode(TEACHER, batch.negatives)

        change = float("nan")
        if controller is not None and observe:
            controller.observe(channel_importance(f_anc, f_pos, f_neg), self.state.iteration)
            change = controller.state.change_ratio_log[-1].change_ratio
        masked_anc = self._masked(f_anc)

        l_ce = ce_loss(model.classify(masked_anc), batch.labels)
        l_ins = zero_loss()
        if config.use_isl:
            l_ins = instance_loss(
                model.project_global(STUDENT, masked_anc),
                model.project_global(TEACHER, self._masked(f_pos)),
                model.project_global(TEACHER, self._masked(f_neg)),
                config.loss.d_ins,
            )
        l_loc = zero_loss()
        if config.use_lsl:
            l_loc = self._local_loss(batch, f_anc, f_pos, f_neg)
        return LossTerms(l_ce=l_ce, l_ins=l_ins, l_loc=l_loc, change_ratio=change)

    def total(self, terms: LossTerms) -> Tensor:
        weights = self.config.loss
        return total_loss(
            terms.l_ce, terms.l_ins, terms.l_loc, w_ce=weights.w_ce, w_ins=weights.w_ins, w_loc=weights.w_loc
        )

    def step(self, batch: TripletBatch, epoch: int) -> TelemetryRow:
        config = self.config
        model = self.model
        controller = self.state.plc
        iteration = self.state.iteration
        lr = step_decay_lr(config.lr, epoch, factor=config.lr_decay, every=config.lr_step)
        self.state.adam.lr = lr
        model.zero_grad()

        terms = self.forward_losses(batch)
        try:
            loss = self.total(terms)
        except TrainingError as exc:
            get_tape().clear()
            raise TrainingError(str(exc), iteration=iteration, epoch=epoch) from exc
        if not np.isfinite(loss.item()):
            get_tape().clear()
            raise TrainingError(f"non-finite total loss {loss.item()}", iteration=iteration, epoch=epoch)

        backward(loss)
        params = model.parameters()
        # heads of disabled objectives get no gradient and stay frozen
        adam_step(params, [p.grad for p in params], self.state.adam, skip_missing=True)
        model.ema_update(config.alpha)

        row = TelemetryRow(
            iteration=iteration,
            epoch=epoch,
            lr=lr,
            rho=controller.state.rho if controller is not None else 0.0,
            change_ratio=terms.change_ratio,
            l_ce=terms.l_ce.item(),
            l_ins=terms.l_ins.item(),
            l_loc=terms.l_loc.item(),
            l_total=loss.item(),
        )
        self.state.iteration += 1
        logger.debug(
            "iter %d epoch %d lr %.2e rho %.3f ce %.4f ins %.4f loc %.4f",
            iteration, epoch, lr, row.rho, row.l_ce, row.l_ins, row.l_loc,
        )
        return row

    def _local_loss(self, batch: TripletBatch, f_anc: Tensor, f_pos: Tensor, f_neg: Tensor) -> Tensor:
        config = self.config
        model = self.model
        branch = config.lsl_branch
        if branch == STUDENT:
            f_pos = model.encode(STUDENT, batch.positives)
            f_neg = model.encode(STUDENT, batch.negatives)
        if config.local_head_input == "masked":
            f_anc, f_pos, f_neg = self._masked(f_anc), self._masked(f_pos), self._masked(f_neg)
        result = compute_local_loss(
            model.embed_local(STUDENT, f_anc),
            model.embed_local(branch, f_pos),
            model.embed_local(branch, f_neg),
            batch.patch_labels_anc,
            batch.patch_labels_pos,
            batch.patch_labels_neg,
            config.loss,
        )
        return result.loss

    # loop ------------------------------------------------------------------

    def run(self, max_steps: Optional[int] = None) -> TrainResult:
        """Train to the configured epoch count, or stop after ``max_steps`` iterations."""

        config = self.config
        steps = 0
        while self.state.epoch < config.epochs:
            epoch = self.state.epoch
            if self.state.plc is not None:
                self.state.plc.begin_epoch(epoch, config.epochs)
            rows_before = len(self.telemetry)
            for batch_index in range(self.state.batch_index, self.batch_count()):
                if max_steps is not None and steps >= max_steps:
                    return TrainResult(checkpoint=self.state, telemetry=list(self.telemetry))
                self.telemetry.append(self.step(self.build_batch(epoch, batch_index), epoch))
                self.state.batch_index = batch_index + 1
                steps += 1
            epoch_rows = self.telemetry[rows_before:]
            if epoch_rows:
                logger.info(
                    "Epoch %d/%d: ce %.4f ins %.4f loc %.4f rho %.3f",
                    epoch + 1,
                    config.epochs,
                    np.mean([r.l_ce for r in epoch_rows]),
                    np.mean([r.l_ins for r in epoch_rows]),
                    np.mean([r.l_loc for r in epoch_rows]),
                    epoch_rows[-1].rho,
                )
            self.state.epoch = epoch + 1
            self.state.batch_index = 0
        return TrainResult(checkpoint=self.state, telemetry=list(self.telemetry))


def write_telemetry(path: Path, rows: Iterable[TelemetryRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=TELEMETRY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv())
    return path


def read_telemetry(path: Path) -> List[TelemetryRow]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [
            TelemetryRow(
                iteration=int(row["iteration"]),
                epoch=int(row["epoch"]),
                **{name: float(row[name]) for name in TELEMETRY_FIELDS[2:]},
            )
            for row in reader
        ]


def write_change_ratios(path: Path, rows: Sequence[TelemetryRow]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CHANGE_RATIO_FIELDS)
        for row in rows:
            writer.writerow([row.iteration, repr(row.rho), repr(row.change_ratio)])
    return path


def train(
    dataset: VideoCatalog,
    config: TrainConfig,
    out_dir: Optional[Path] = None,
    *,
    checkpoint: Optional[Checkpoint] = None,
) -> TrainResult:
    """Run training; with ``out_dir`` also write the checkpoint and telemetry CSVs there."""

    trainer = Trainer(dataset, config, checkpoint)
    logger.info(
        "Training on %d anchor videos, %d batch(es) per epoch, %d epoch(s)",
        len(trainer.anchors),
        trainer.batch_count(),
        config.epochs,
    )
    result = trainer.run()
    if out_dir is not None:
        out_dir = Path(out_dir)
        rows = _history(out_dir / TELEMETRY_NAME, checkpoint) + result.telemetry
        save_checkpoint(result.checkpoint, out_dir / CHECKPOINT_NAME)
        write_telemetry(out_dir / TELEMETRY_NAME, rows)
        write_change_ratios(out_dir / CHANGE_RATIO_NAME, rows)
    return result


def _history(path: Path, checkpoint: Optional[Checkpoint]) -> List[TelemetryRow]:
    """Rows a resumed run already wrote before ``checkpoint``."""

    if checkpoint is None or not path.is_file():
        return []
    try:
        rows = read_telemetry(path)
    except (KeyError, ValueError) as exc:
        logger.warning("Ignoring unreadable telemetry %s: %s", path, exc)
        return []
    return [row for row in rows if row.iteration < checkpoint.iteration]


__all__ = [
    "CHANGE_RATIO_NAME",
    "CHECKPOINT_NAME",
    "LossTerms",
    "TELEMETRY_FIELDS",
    "TELEMETRY_NAME",
    "TelemetryRow",
    "TrainResult",
    "Trainer",
    "read_telemetry",
    "train",
    "train_anchor_ids",
    "write_change_ratios",
    "write_telemetry",
]
