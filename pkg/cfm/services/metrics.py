"""ACC, AUC, EER, HTER, ROC points and video-level aggregation.

Fake is the positive class (label 1) and a sample is predicted fake when its
score is at least the threshold.
"""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from cfm.core.errors import MetricsError

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("protocol", "split", "level", "ACC", "AUC", "EER", "HTER", "n_real", "n_fake")
ROC_FIELDS = ("threshold", "FAR", "TPR")


@dataclass(frozen=True)
class ScoredSample:
    id: str
    video_id: str
    score: float
    label: int


@dataclass
class MetricsRow:
    protocol: str
    split: str
    level: str
    acc: float
    auc: float
    eer: float
    hter: float
    n_real: int
    n_fake: int

    def as_csv(self) -> Dict[str, str]:
        return {
            "protocol": self.protocol,
            "split": self.split,
            "level": self.level,
            "ACC": f"{self.acc:.6f}",
            "AUC": f"{self.auc:.6f}",
            "EER": f"{self.eer:.6f}",
            "HTER": f"{self.hter:.6f}",
            "n_real": str(self.n_real),
            "n_fake": str(self.n_fake),
        }


def _arrays(samples: Sequence[ScoredSample]) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.array([s.score for s in samples], dtype=np.float64)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise MetricsError("scores must be finite")
    return scores, labels


def _require_both(labels: np.ndarray, what: str) -> Tuple[int, int]:
    n_fake = int(np.count_nonzero(labels == 1))
    n_real = int(np.count_nonzero(labels == 0))
    if n_fake == 0 or n_real == 0:
        raise MetricsError(f"{what} needs both classes (real={n_real}, fake={n_fake})")
    return n_real, n_fake


def roc_auc(samples: Sequence[ScoredSample]) -> float:
    """Mann-Whitney AUC with half credit for ties (midranks)."""

    scores, labels = _arrays(samples)
    n_real, n_fake = _require_both(labels, "AUC")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_fake * (n_fake + 1) / 2.0) / (n_fake * n_real)


def _rates(scores: np.ndarray, labels: np.ndarray, threshold: float) -> Tuple[float, float]:
    predicted = scores >= threshold
    real = labels == 0
    fake = labels == 1
    far = float(np.count_nonzero(predicted & real)) / max(1, int(real.sum()))
    frr = float(np.count_nonzero(~predicted & fake)) / max(1, int(fake.sum()))
    return far, frr


def roc_curve(samples: Sequence[ScoredSample]) -> List[Tuple[float, float, float]]:
    """``(threshold, FAR, TPR)`` points from the strictest threshold down.

    The first point uses ``+inf`` (nothing predicted fake).
    """

    scores, labels = _arrays(samples)
    _require_both(labels, "ROC")
    points = [(float("inf"), 0.0, 0.0)]
    for threshold in np.unique(scores)[::-1]:
        far, frr = _rates(scores, labels, float(threshold))
        points.append((float(threshold), far, 1.0 - frr))
    return points


def eer(samples: Sequence[ScoredSample]) -> Tuple[float, float]:
    """Equal error rate and the threshold where FAR meets FRR.

    Walks the ROC from the strictest threshold; at the first point with
    ``FAR >= FRR`` the crossing is interpolated linearly against the previous
    point and the EER is ``(FAR + FRR) / 2`` there.  The returned threshold is
    the one of those two ROC points whose ``|FAR - FRR|`` is smaller, so
    scoring at it reproduces rates within one step of the crossing.
    """

    points = roc_curve(samples)
    previous = points[0]
    prev_frr = 1.0 - previous[2]
    for threshold, far, tpr in points[1:]:
        frr = 1.0 - tpr
        if far >= frr:
            gap_prev = prev_frr - previous[1]
            gap_here = far - frr
            denominator = gap_prev + gap_here
            t = gap_prev / denominator if denominator > 0 else 0.0
            far_x = previous[1] + t * (far - previous[1])
            frr_x = prev_frr + t * (frr - prev_frr)
            closest = previous[0] if gap_prev < gap_here else threshold
            return (far_x + frr_x) / 2.0, float(closest)
        previous, prev_frr = (threshold, far, tpr), frr
    # unreachable: the loosest threshold predicts everything fake (FAR 1, FRR 0)
    threshold, far, tpr = points[-1]
    return (far + 1.0 - tpr) / 2.0, threshold


def accuracy(samples: Sequence[ScoredSample], threshold: float = 0.5) -> float:
    scores, labels = _arrays(samples)
    if not len(scores):
        raise MetricsError("accuracy of an empty sample set")
    return float(np.mean((scores >= threshold).astype(np.int64) == labels))


def hter(samples: Sequence[ScoredSample], threshold: float = 0.5) -> float:
    scores, labels = _arrays(samples)
    _require_both(labels, "HTER")
    far, frr = _rates(scores, labels, threshold)
    return (far + frr) / 2.0


def video_level(samples: Sequence[ScoredSample]) -> List[ScoredSample]:
    """One sample per video: mean frame score, ordered by first appearance."""

    grouped: "OrderedDict[str, List[ScoredSample]]" = OrderedDict()
    for sample in samples:
        grouped.setdefault(sample.video_id, []).append(sample)
    videos = []
    for video_id, frames in grouped.items():
        labels = {frame.label for frame in frames}
        if len(labels) != 1:
            raise MetricsError(f"video {video_id} mixes labels {sorted(labels)}")
        videos.append(
            ScoredSample(
                id=video_id,
                video_id=video_id,
                score=float(np.mean([frame.score for frame in frames])),
                label=labels.pop(),
            )
        )
    return videos


def summarize(
    samples: Sequence[ScoredSample],
    *,
    protocol: str,
    split: str,
    level: str,
    threshold: float = 0.5,
) -> MetricsRow:
    scores, labels = _arrays(samples)
    n_real, n_fake = _require_both(labels, f"{protocol}/{split}/{level} metrics")
    rate, _ = eer(samples)
    return MetricsRow(
        protocol=protocol,
        split=split,
        level=level,
        acc=accuracy(samples, threshold),
        auc=roc_auc(samples),
        eer=rate,
        hter=hter(samples, threshold),
        n_real=n_real,
        n_fake=n_fake,
    )


def write_metrics(path: Path, rows: Iterable[MetricsRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv())
    return path


def write_roc(path: Path, points: Iterable[Tuple[float, float, float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ROC_FIELDS)
        for threshold, far, tpr in points:
            writer.writerow([f"{threshold:.6f}", f"{far:.6f}", f"{tpr:.6f}"])
    return path


__all__ = [
    "METRIC_FIELDS",
    "MetricsError",
    "MetricsRow",
    "ROC_FIELDS",
    "ScoredSample",
    "accuracy",
    "eer",
    "hter",
    "roc_auc",
    "roc_curve",
    "summarize",
    "video_level",
    "write_metrics",
    "write_roc",
]
