"""Multi-variant, multi-seed ablation runs with a CSV metrics store."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from cfm.core.config import AUG_GROUPS, TrainConfig, apply_overrides
from cfm.core.errors import ConfigError
from cfm.services.dataset import VideoCatalog
from cfm.services.evaluation import evaluate_cross_manip
from cfm.services.trainer import train

logger = logging.getLogger(__name__)

ABLATION_FIELDS = ("grid", "variant", "seed", "intra_auc", "held_out_auc")
ABLATION_NAME = "ablation.csv"
SUMMARY_SEED = "mean"


@dataclass(frozen=True)
class Variant:
    name: str
    overrides: Tuple[str, ...] = ()


_BASELINE = ("use_aug=false", "use_isl=false", "use_lsl=false", "use_plc=false")

GRIDS: Dict[str, Tuple[Variant, ...]] = {
    "components": (
        Variant("baseline", _BASELINE),
        Variant("baseline + Aug", ("use_isl=false", "use_lsl=false", "use_plc=false")),
        Variant("w/o Aug", ("use_aug=false",)),
        Variant("w/o ISL", ("use_isl=false",)),
        Variant("w/o LSL", ("use_lsl=false",)),
        Variant("w/o PLC", ("use_plc=false",)),
        Variant("CFM"),
    ),
    "masking": (
        Variant("w/o regularization", ("use_plc=false",)),
        Variant("RM", ("mask_strategy=random",)),
        Variant("PLC", ("mask_strategy=plc",)),
    ),
    "augmentation": (
        Variant("no augmentation", ("use_aug=false",)),
        *(
            Variant(f"w/o {group}", (f"aug_groups={','.join(g for g in AUG_GROUPS if g != group)}",))
            for group in AUG_GROUPS
        ),
        Variant("all groups"),
    ),
    "pairing": (
        Variant("unpaired", ("paired_aug=false",)),
        Variant("paired", ("paired_aug=true",)),
    ),
    "params": (
        Variant("s_pos=1 s_neg=-1", ("loss.d_ins=1", "loss.s_pos=1", "loss.s_neg=-1")),
        Variant("s_pos=0.8 s_neg=-0.5", ("loss.d_ins=1", "loss.s_pos=0.8", "loss.s_neg=-0.5")),
        Variant("s_pos=0.5 s_neg=-0.2", ("loss.d_ins=1", "loss.s_pos=0.5", "loss.s_neg=-0.2")),
        Variant("d_ins=0.8", ("loss.d_ins=0.8",)),
        Variant("d_ins=1.2", ("loss.d_ins=1.2",)),
        Variant("d_ins=1.6", ("loss.d_ins=1.6",)),
    ),
    "weighting": (
        Variant("w/o weighting", ("loss.uniform_tau=true",)),
        Variant("with weighting", ("loss.uniform_tau=false",)),
    ),
}


def variants_for(grid: str) -> Tuple[Variant, ...]:
    try:
        return GRIDS[grid]
    except KeyError as exc:
        raise ConfigError(f"unknown ablation grid {grid!r}; expected one of {sorted(GRIDS)}") from exc


@dataclass
class ExperimentRow:
    grid: str
    variant: str
    seed: str
    intra_auc: float
    held_out_auc: float

    def as_csv(self) -> Dict[str, str]:
        return {
            "grid": self.grid,
            "variant": self.variant,
            "seed": self.seed,
            "intra_auc": f"{self.intra_auc:.6f}",
            "held_out_auc": f"{self.held_out_auc:.6f}",
        }


@dataclass
class MetricsStore:
    """Collects experiment rows and persists them as CSV."""

    path: Optional[Path] = None
    rows: List[ExperimentRow] = field(default_factory=list)

    def insert(self, row: ExperimentRow) -> None:
        self.rows.append(row)

    def __iter__(self) -> Iterator[ExperimentRow]:
        return iter(self.rows)

    def write(self, path: Optional[Path] = None) -> Path:
        target = Path(path or self.path or ABLATION_NAME)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=ABLATION_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row.as_csv())
        return target


def _mean(values: Iterable[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


class ExperimentRunner:
    """Trains every variant of a grid on one family per seed and scores it."""

    def __init__(
        self,
        dataset: VideoCatalog,
        base: TrainConfig,
        store: MetricsStore,
        *,
        seeds: Sequence[int] = (0,),
        train_family: str = "A",
        out_dir: Optional[Path] = None,
    ):
        self.dataset = dataset
        self.base = base
        self.store = store
        self.seeds = tuple(seeds)
        self.train_family = train_family
        self.out_dir = None if out_dir is None else Path(out_dir)

    def config_for(self, variant: Variant, seed: int) -> TrainConfig:
        overrides = (*variant.overrides, f"seed={seed}", f"train_families={self.train_family}")
        return apply_overrides(self.base, overrides)

    def run_variant(self, grid: str, variant: Variant, seed: int) -> ExperimentRow:
        config = self.config_for(variant, seed)
        run_dir = None
        if self.out_dir is not None:
            slug = "".join(c if c.isalnum() else "_" for c in variant.name).strip("_")
            run_dir = self.out_dir / grid / f"{slug}_seed{seed}"
        result = train(self.dataset, config, run_dir)
        report = evaluate_cross_manip(result.checkpoint, self.dataset)
        intra = next(row.auc for row in report.cross if row.intra)
        held_out = report.cross_average()
        row = ExperimentRow(
            grid=grid,
            variant=variant.name,
            seed=str(seed),
            intra_auc=intra,
            held_out_auc=float("nan") if held_out is None else held_out,
        )
        logger.info("%s / %s seed %d: intra %.4f held-out %.4f", grid, variant.name, seed, intra, row.held_out_auc)
        return row

    def run_grid(self, grid: str = "components") -> List[ExperimentRow]:
        """Run every variant for every seed; a summary row per variant follows its seeds."""

        rows: List[ExperimentRow] = []
        for variant in variants_for(grid):
            per_seed = [self.run_variant(grid, variant, seed) for seed in self.seeds]
            for row in per_seed:
                self.store.insert(row)
            summary = ExperimentRow(
                grid=grid,
                variant=variant.name,
                seed=SUMMARY_SEED,
                intra_auc=_mean(r.intra_auc for r in per_seed),
                held_out_auc=_mean(r.held_out_auc for r in per_seed),
            )
            self.store.insert(summary)
            rows.extend([*per_seed, summary])
        return rows


__all__ = [
    "ABLATION_FIELDS",
    "ABLATION_NAME",
    "ExperimentRow",
    "ExperimentRunner",
    "GRIDS",
    "MetricsStore",
    "Variant",
    "variants_for",
]
