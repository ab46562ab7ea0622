from __future__ import annotations

import math
import pathlib
import sys

import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import DatasetError
from cfm.services.report import format_table, read_rows, render_report, summarize_change_ratio


def _write(path: pathlib.Path, text: str) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


CHANGE_RATIOS = "iteration,rho,change_ratio\n0,0.5,nan\n1,0.5,0.2\n2,0.5,0.4\n3,0.5,0.6\n4,0.0,0.0\n"


def test_change_ratio_summary_uses_later_masked_half(tmp_path):
    path = _write(tmp_path / "run-a" / "change_ratio.csv", CHANGE_RATIOS)
    summary = summarize_change_ratio(path)
    assert summary.run == "run-a"
    assert (summary.iterations, summary.masked_iterations) == (5, 3)
    assert summary.mean_change_ratio == pytest.approx(0.5)


def test_change_ratio_without_masking_is_nan(tmp_path):
    path = _write(tmp_path / "change_ratio.csv", "iteration,rho,change_ratio\n0,0.0,nan\n")
    assert math.isnan(summarize_change_ratio(path, run="plain").mean_change_ratio)


def test_format_table_aligns_columns():
    text = format_table([{"a": "1", "bb": "long value"}, {"a": "22", "bb": "x"}])
    lines = text.splitlines()
    assert lines[0].rstrip() == "a   bb"
    assert lines[1] == "--  ----------"
    assert lines[2] == "1   long value"
    assert format_table([]) == "(no rows)"


def test_render_report_collects_known_tables(tmp_path):
    _write(tmp_path / "eval" / "metrics.csv", "protocol,split,level,ACC\nintra,test,image,0.9\n")
    _write(tmp_path / "ablate" / "ablation.csv", "grid,variant,seed\ncomponents,CFM,0\n")
    _write(tmp_path / "train" / "change_ratio.csv", CHANGE_RATIOS)
    text = render_report([tmp_path])
    assert "== Metrics (" in text
    assert "== Ablation (" in text
    assert "== Change ratio ==" in text
    assert text.index("== Metrics") < text.index("== Ablation")
    assert "0.5000" in text


def test_render_report_accepts_single_file(tmp_path):
    path = _write(tmp_path / "robustness.csv", "kind,severity\nclean,0\n")
    assert render_report([path]).startswith("== Robustness")


def test_render_report_without_results(tmp_path):
    with pytest.raises(DatasetError, match="no result CSVs"):
        render_report([tmp_path])


def test_read_rows_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="cannot read"):
        read_rows(tmp_path / "absent.csv")
