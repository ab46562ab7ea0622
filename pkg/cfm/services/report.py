"""Plain-text summaries rendered from result CSVs only."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from cfm.core.errors import DatasetError

logger = logging.getLogger(__name__)

KNOWN_TABLES = {
    "metrics.csv": "Metrics",
    "cross_manip.csv": "Cross-manipulation",
    "robustness.csv": "Robustness",
    "ablation.csv": "Ablation",
}


def read_rows(path: Path) -> List[Dict[str, str]]:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


def format_table(rows: Sequence[Dict[str, str]], columns: Optional[Sequence[str]] = None) -> str:
    if not rows:
        return "(no rows)"
    columns = list(columns or rows[0].keys())
    widths = {c: max(len(c), *(len(str(row.get(c, ""))) for row in rows)) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    rule = "  ".join("-" * widths[c] for c in columns)
    body = ["  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns) for row in rows]
    return "\n".join([header, rule, *body])


@dataclass
class ChangeRatioSummary:
    run: str
    iterations: int
    masked_iterations: int
    mean_change_ratio: float


def summarize_change_ratio(path: Path, run: Optional[str] = None) -> ChangeRatioSummary:
    """Mean change ratio over the later half of the iterations that masked channels."""

    rows = read_rows(path)
    masked = []
    for row in rows:
        rho = float(row["rho"])
        ratio = float(row["change_ratio"])
        if rho > 0.0 and math.isfinite(ratio):
            masked.append(ratio)
    later = masked[len(masked) // 2 :]
    mean = sum(later) / len(later) if later else float("nan")
    return ChangeRatioSummary(
        run=run or Path(path).parent.name,
        iterations=len(rows),
        masked_iterations=len(masked),
        mean_change_ratio=mean,
    )


def _find(root: Path, name: str) -> List[Path]:
    if root.is_file():
        return [root] if root.name == name else []
    return sorted(root.rglob(name))


def render_report(paths: Iterable[Path]) -> str:
    """Render every known CSV found under ``paths``."""

    sections: List[str] = []
    roots = [Path(p) for p in paths]
    for name, title in KNOWN_TABLES.items():
        for root in roots:
            for path in _find(root, name):
                sections.append(f"== {title} ({path.parent}) ==\n{format_table(read_rows(path))}")
    summaries = [summarize_change_ratio(path) for root in roots for path in _find(root, "change_ratio.csv")]
    if summaries:
        rows = [
            {
                "run": s.run,
                "iterations": str(s.iterations),
                "masked": str(s.masked_iterations),
                "mean_change_ratio": f"{s.mean_change_ratio:.4f}",
            }
            for s in summaries
        ]
        sections.append(f"== Change ratio ==\n{format_table(rows)}")
    if not sections:
        raise DatasetError(f"no result CSVs found under {', '.join(str(r) for r in roots)}")
    return "\n\n".join(sections) + "\n"


__all__ = ["ChangeRatioSummary", "format_table", "read_rows", "render_report", "summarize_change_ratio"]
