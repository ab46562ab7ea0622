"""Evaluation protocols: intra, cross-manipulation and robustness."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cfm.core.config import FAMILIES
from cfm.core.errors import ProtocolError

from .checkpoint import Checkpoint
from .dataset import VideoCatalog
from .metrics import MetricsRow, ScoredSample, roc_auc, roc_curve, summarize, video_level, write_metrics, write_roc
from .model import CfmModel
from .perturb import DEFAULT_SEVERITY, KINDS, PerturbSpec, apply_perturbation
from .triplet import to_channels_first

logger = logging.getLogger(__name__)

PROTOCOLS = ("intra", "cross-manip", "robustness")
CROSS_AVG = "Cross Avg."
CROSS_FIELDS = ("train_family", "test_family", "AUC", "intra")
ROBUSTNESS_FIELDS = ("kind", "severity", "parameter", "AUC", "drop")
METRICS_NAME = "metrics.csv"
CROSS_NAME = "cross_manip.csv"
ROBUSTNESS_NAME = "robustness.csv"


@dataclass
class CrossRow:
    train_family: str
    test_family: str
    auc: float
    intra: bool


@dataclass
class RobustnessRow:
    kind: str
    severity: int
    parameter: float
    auc: float
    drop: float


@dataclass
class MetricsReport:
    protocol: str
    metrics: List[MetricsRow] = field(default_factory=list)
    cross: List[CrossRow] = field(default_factory=list)
    robustness: List[RobustnessRow] = field(default_factory=list)
    roc: Dict[str, List[Tuple[float, float, float]]] = field(default_factory=dict)

    def cross_average(self) -> Optional[float]:
        held_out = [row.auc for row in self.cross if not row.intra and row.test_family != CROSS_AVG]
        return float(np.mean(held_out)) if held_out else None

    def write(self, out_dir: Path) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if self.metrics:
            written.append(write_metrics(out_dir / METRICS_NAME, self.metrics))
        for level, points in self.roc.items():
            written.append(write_roc(out_dir / f"roc_{level}.csv", points))
        if self.cross:
            written.append(_write_rows(out_dir / CROSS_NAME, CROSS_FIELDS, [_cross_csv(r) for r in self.cross]))
        if self.robustness:
            written.append(
                _write_rows(out_dir / ROBUSTNESS_NAME, ROBUSTNESS_FIELDS, [_robust_csv(r) for r in self.robustness])
            )
        return written


def _cross_csv(row: CrossRow) -> Dict[str, str]:
    return {
        "train_family": row.train_family,
        "test_family": row.test_family,
        "AUC": f"{row.auc:.6f}",
        "intra": "yes" if row.intra else "no",
    }


def _robust_csv(row: RobustnessRow) -> Dict[str, str]:
    return {
        "kind": row.kind,
        "severity": str(row.severity),
        "parameter": f"{row.parameter:g}",
        "AUC": f"{row.auc:.6f}",
        "drop": f"{row.drop:.6f}",
    }


def _write_rows(path: Path, fields: Sequence[str], rows: Sequence[Dict[str, str]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


# scoring -------------------------------------------------------------------


def split_videos(dataset: VideoCatalog, split: str, families: Sequence[str]) -> List[str]:
    return [entry.id for entry in dataset.manifest.split(split, families)]


def score_videos(
    model: CfmModel,
    dataset: VideoCatalog,
    video_ids: Sequence[str],
    perturbation: Optional[Tuple[str, int]] = None,
) -> List[ScoredSample]:
    """Frame-level fake scores; ``perturbation`` is ``(kind, severity)``."""

    samples: List[ScoredSample] = []
    for position, video_id in enumerate(video_ids):
        frames = dataset.frames(video_id)
        if perturbation is not None:
            kind, severity = perturbation
            frames = [
                apply_perturbation(frame, PerturbSpec(kind, severity, seed=position * 1000 + k))
                for k, frame in enumerate(frames)
            ]
        scores = model.predict(to_channels_first(frames))
        label = dataset.manifest.get(video_id).target
        for k, score in enumerate(scores):
            samples.append(ScoredSample(id=f"{video_id}/{k}", video_id=video_id, score=float(score), label=label))
    return samples


# protocols -----------------------------------------------------------------


def evaluate_intra(checkpoint: Checkpoint, dataset: VideoCatalog, *, split: str = "test") -> MetricsReport:
    families = checkpoint.config.train_families
    samples = score_videos(checkpoint.model, dataset, split_videos(dataset, split, families))
    videos = video_level(samples)
    report = MetricsReport(protocol="intra")
    report.metrics.append(summarize(samples, protocol="intra", split=split, level="image"))
    report.metrics.append(summarize(videos, protocol="intra", split=split, level="video"))
    report.roc = {"image": roc_curve(samples), "video": roc_curve(videos)}
    for row in report.metrics:
        logger.info("intra/%s %s: AUC %.4f EER %.4f ACC %.4f", split, row.level, row.auc, row.eer, row.acc)
    return report


def evaluate_cross_manip(
    checkpoint: Checkpoint,
    dataset: VideoCatalog,
    families: Sequence[str] = FAMILIES,
) -> MetricsReport:
    """Per-family test AUC for a checkpoint trained on exactly one family."""

    trained = checkpoint.config.train_families
    if len(trained) != 1:
        raise ProtocolError(
            f"cross-manip needs a checkpoint trained on one family, this one saw {', '.join(trained)}"
        )
    train_family = trained[0]
    report = MetricsReport(protocol="cross-manip")
    for family in families:
        samples = score_videos(checkpoint.model, dataset, split_videos(dataset, "test", (family,)))
        auc = roc_auc(samples)
        report.cross.append(CrossRow(train_family, family, auc, intra=family == train_family))
        report.metrics.append(summarize(samples, protocol=f"cross-manip:{family}", split="test", level="image"))
        logger.info("cross-manip %s -> %s: AUC %.4f", train_family, family, auc)
    average = report.cross_average()
    if average is not None:
        report.cross.append(CrossRow(train_family, CROSS_AVG, average, intra=False))
    return report


def evaluate_robustness(
    checkpoint: Checkpoint,
    dataset: VideoCatalog,
    *,
    severity: int = DEFAULT_SEVERITY,
    all_levels: bool = False,
) -> MetricsReport:
    """Clean AUC plus one row per perturbation (and per severity with ``all_levels``)."""

    model = checkpoint.model
    video_ids = split_videos(dataset, "test", checkpoint.config.train_families)
    clean = roc_auc(score_videos(model, dataset, video_ids))
    report = MetricsReport(protocol="robustness")
    report.robustness.append(RobustnessRow("clean", 0, 0.0, clean, 0.0))
    levels = range(1, 6) if all_levels else (severity,)
    for kind in KINDS:
        for level in levels:
            spec = PerturbSpec(kind, level)
            auc = roc_auc(score_videos(model, dataset, video_ids, (kind, level)))
            report.robustness.append(RobustnessRow(kind, level, float(spec.parameter), auc, clean - auc))
            logger.info("robustness %s@%d: AUC %.4f (drop %.4f)", kind, level, auc, clean - auc)
    return report


def evaluate(
    checkpoint: Checkpoint,
    dataset: VideoCatalog,
    protocol: str = "intra",
    **options,
) -> MetricsReport:
    if protocol == "intra":
        return evaluate_intra(checkpoint, dataset, **options)
    if protocol == "cross-manip":
        return evaluate_cross_manip(checkpoint, dataset, **options)
    if protocol == "robustness":
        return evaluate_robustness(checkpoint, dataset, **options)
    raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


__all__ = [
    "CROSS_AVG",
    "CROSS_NAME",
    "CrossRow",
    "METRICS_NAME",
    "MetricsReport",
    "PROTOCOLS",
    "ROBUSTNESS_NAME",
    "RobustnessRow",
    "evaluate",
    "evaluate_cross_manip",
    "evaluate_intra",
    "evaluate_robustness",
    "score_videos",
    "split_videos",
]
