from __future__ import annotations

import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from typer.testing import CliRunner

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from cfm import manage as manage_module
from cfm.services.dataset import write_ppm

runner = CliRunner()

SMOKE_CONFIG = ROOT / "infra" / "smoke.cfg"
DATA_ARGS = ["--seed", "3", "--override", "image_size=32", "--override", "frames=3", "--override", "sources=4"]
TRAIN_ARGS = ["--config", str(SMOKE_CONFIG), "--override", "model.image_size=32"]


def _invoke(*args: str):
    return runner.invoke(manage_module.app, list(args))


def _files(root: Path):
    return {path.relative_to(root): path.read_bytes() for path in sorted(root.rglob("*")) if path.is_file()}


@pytest.fixture(scope="module")
def lab(tmp_path_factory: pytest.TempPathFactory) -> SimpleNamespace:
    root = tmp_path_factory.mktemp("lab")
    data = root / "data"
    result = _invoke("gen-data", "--out", str(data), *DATA_ARGS)
    assert result.exit_code == 0, result.output
    run = root / "run"
    result = _invoke("train", *TRAIN_ARGS, "--data", str(data), "--out", str(run))
    assert result.exit_code == 0, result.output
    return SimpleNamespace(data=data, run=run, checkpoint=run / "checkpoint")


def test_gen_data_is_byte_reproducible(lab, tmp_path: Path) -> None:
    result = _invoke("gen-data", "--out", str(tmp_path / "again"), *DATA_ARGS)
    assert result.exit_code == 0
    assert "Wrote 20 videos" in result.output
    assert _files(tmp_path / "again") == _files(lab.data)


def test_train_writes_run_artifacts(lab) -> None:
    assert (lab.checkpoint / "metadata.csv").is_file()
    assert (lab.run / "telemetry.csv").read_text().count("\n") >= 2
    assert (lab.run / "change_ratio.csv").is_file()


def test_resume_from_finished_checkpoint(lab, tmp_path: Path) -> None:
    result = _invoke("train", "--resume", str(lab.checkpoint), "--data", str(lab.data), "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    assert "Trained 4 iteration(s)" in result.output


def test_eval_intra(lab, tmp_path: Path) -> None:
    result = _invoke("eval", "--checkpoint", str(lab.checkpoint), "--data", str(lab.data), "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    assert "intra image: ACC" in result.output
    assert "intra video: ACC" in result.output
    assert (tmp_path / "metrics.csv").is_file()


def test_eval_cross_manip_rejects_mixed_family_checkpoint(lab, tmp_path: Path) -> None:
    result = _invoke(
        "eval", "--checkpoint", str(lab.checkpoint), "--data", str(lab.data), "--protocol", "cross-manip",
        "--out", str(tmp_path),
    )
    assert result.exit_code == 2
    assert "one family" in result.output


def test_robustness_lists_every_perturbation(lab, tmp_path: Path) -> None:
    result = _invoke(
        "robustness", "--checkpoint", str(lab.checkpoint), "--data", str(lab.data), "--severity", "2",
        "--out", str(tmp_path),
    )
    assert result.exit_code == 0, result.output
    rows = [line for line in result.output.splitlines() if " sev " in line]
    assert len(rows) == 8
    assert (tmp_path / "robustness.csv").is_file()


def test_attention_writes_heatmap(lab, tmp_path: Path) -> None:
    out = tmp_path / "heat.pgm"
    result = _invoke(
        "attention", "--checkpoint", str(lab.checkpoint), "--data", str(lab.data), "--video", "v0000_A",
        "--frame", "1", "--out", str(out),
    )
    assert result.exit_code == 0, result.output
    assert out.read_bytes().startswith(b"P5")


def test_attention_rejects_frames_of_wrong_size(lab, tmp_path: Path) -> None:
    image = tmp_path / "small.ppm"
    write_ppm(image, np.zeros((16, 16, 3)))
    result = _invoke(
        "attention", "--checkpoint", str(lab.checkpoint), "--image", str(image), "--out", str(tmp_path / "h.pgm")
    )
    assert result.exit_code == 2
    assert "expects 32x32" in result.output


def test_report_renders_run(lab) -> None:
    result = _invoke("report", str(lab.run))
    assert result.exit_code == 0, result.output
    assert "== Change ratio ==" in result.output


def test_ablate_pairing_grid(lab, tmp_path: Path) -> None:
    result = _invoke(
        "ablate", *TRAIN_ARGS, "--data", str(lab.data), "--grid", "pairing", "--seeds", "0", "--family", "A",
        "--out", str(tmp_path),
    )
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "grid,variant,seed,intra_auc,held_out_auc"
    assert [line.split(",")[1] for line in lines[1:]] == ["unpaired", "unpaired", "paired", "paired"]


def test_run_returns_zero_on_success(lab) -> None:
    assert manage_module.run(["--verbose", "report", str(lab.run)]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["train", "--override", "epochs"],
        ["train", "--override", "unknown_key=1"],
        ["eval", "--checkpoint", "ckpt", "--protocol", "cross-dataset"],
        ["ablate", "--seeds", "x"],
        ["attention", "--checkpoint", "ckpt", "--out", "h.pgm"],
    ],
    ids=["unknown-command", "override-without-value", "unknown-key", "bad-protocol", "bad-seeds", "no-frame"],
)
def test_run_usage_errors_exit_one(argv) -> None:
    assert manage_module.run(argv) == 1


def test_run_missing_checkpoint_exits_two(lab, tmp_path: Path) -> None:
    argv = ["eval", "--checkpoint", str(tmp_path / "missing"), "--data", str(lab.data)]
    assert manage_module.run(argv) == 2


def test_run_resume_with_config_exits_one(lab) -> None:
    argv = ["train", "--resume", str(lab.checkpoint), "--config", str(SMOKE_CONFIG), "--data", str(lab.data)]
    assert manage_module.run(argv) == 1


def test_data_dir_defaults_to_environment(lab, monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("CFM_DATA_DIR", str(lab.data))
    result = _invoke("eval", "--checkpoint", str(lab.checkpoint), "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
