from __future__ import annotations

import pathlib
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.append(str(ROOT))

from cfm.core import settings
from cfm.core.config import (
    LossConfig,
    ModelConfig,
    SynthConfig,
    TrainConfig,
    apply_overrides,
    build_config,
    dump_config,
    load_config,
    parse_pairs,
)
from cfm.core.errors import ConfigError


def test_defaults_follow_the_desk_profile():
    config = TrainConfig()
    assert config.epochs == 10
    assert config.batch_size == 8
    assert config.lr == pytest.approx(1e-3)
    assert config.loss == LossConfig(d_ins=1.2, s_pos=0.8, s_neg=-0.5, t_mask=0.25)
    assert config.model.feature_size == 8
    assert config.model.feature_channels == 64


def test_desk_config_file_spells_out_the_defaults():
    assert load_config(ROOT / "infra" / "desk.cfg") == TrainConfig()


def test_parse_pairs_skips_comments_and_blank_lines():
    pairs = parse_pairs(["# comment", "", "epochs = 3  # trailing", "loss.d_ins=1.6"])
    assert pairs == {"epochs": "3", "loss.d_ins": "1.6"}


def test_parse_pairs_reports_line_number():
    with pytest.raises(ConfigError, match=r"run.cfg:2"):
        parse_pairs(["epochs=3", "nonsense"], source="run.cfg")


def test_load_config_applies_overrides_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs=3\ntrain_families=A,B\nmodel.channels=4,8,8\n", encoding="utf-8")
    config = load_config(path, ["epochs=1", "loss.uniform_tau=true"])
    assert config.epochs == 1
    assert config.train_families == ("A", "B")
    assert config.model.channels == (4, 8, 8)
    assert config.loss.uniform_tau is True


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(None, ["learning_rate=0.1"])


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="loss"):
        load_config(None, ["loss.margin=1"])


@pytest.mark.parametrize(
    "override",
    [
        "epochs=0",
        "loss.s_pos=-0.6",
        "loss.d_ins=0",
        "mask_strategy=dropout",
        "train_families=A,E",
        "aug_groups=color,geometry",
        "model.image_size=60",
    ],
)
def test_invalid_values_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_override_without_equals_rejected():
    with pytest.raises(ConfigError, match="key=value"):
        apply_overrides(TrainConfig(), ["epochs"])


def test_dump_and_load_round_trip(tmp_path):
    config = apply_overrides(TrainConfig(), ["seed=11", "aug_groups=noise", "model.c_star=8", "lr=0.0003"])
    path = tmp_path / "dumped.cfg"
    path.write_text(dump_config(config), encoding="utf-8")
    assert load_config(path) == config


def test_synth_config_rejects_short_videos():
    with pytest.raises(ConfigError, match="frames"):
        build_config(SynthConfig, {"frames": "2"})


def test_model_config_checks_divisibility():
    assert ModelConfig(image_size=32, channels=(4, 8, 8)).feature_size == 4
    with pytest.raises(ValueError):
        ModelConfig(image_size=36, channels=(4, 8, 8))


def test_settings_read_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("CFM_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.delenv("CFM_RUNS_DIR", raising=False)
    assert settings.get_data_dir() == tmp_path / "data"
    assert settings.get_runs_dir() == pathlib.Path("runs")
