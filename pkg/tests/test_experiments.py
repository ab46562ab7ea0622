from __future__ import annotations

import math
import pathlib
import sys
from types import SimpleNamespace

import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.config import AUG_GROUPS
from cfm.core.errors import ConfigError
from cfm.services.evaluation import CrossRow, MetricsReport
from worker import experiments
from worker.experiments import (
    ABLATION_FIELDS,
    ExperimentRunner,
    GRIDS,
    MetricsStore,
    Variant,
    variants_for,
)
from tests.synthetic import tiny_train_config


class FakeTraining:
    """Records the configs it is asked to train and returns canned AUCs."""

    def __init__(self, held_out=(0.6, 0.7, 0.8)):
        self.calls = []
        self.held_out = held_out

    def train(self, dataset, config, run_dir=None):
        self.calls.append((config, run_dir))
        return SimpleNamespace(checkpoint=SimpleNamespace(config=config))

    def evaluate(self, checkpoint, dataset):
        seed = checkpoint.config.seed
        report = MetricsReport(protocol="cross-manip")
        report.cross.append(CrossRow("A", "A", 0.9 + 0.01 * seed, intra=True))
        for family, auc in zip("BCD", self.held_out):
            report.cross.append(CrossRow("A", family, auc + 0.01 * seed, intra=False))
        return report


@pytest.fixture()
def fake(monkeypatch) -> FakeTraining:
    fake = FakeTraining()
    monkeypatch.setattr(experiments, "train", fake.train)
    monkeypatch.setattr(experiments, "evaluate_cross_manip", fake.evaluate)
    return fake


def test_grids_cover_every_study():
    assert set(GRIDS) == {"components", "masking", "augmentation", "pairing", "params", "weighting"}
    assert [v.name for v in GRIDS["components"]][-1] == "CFM"
    assert len(GRIDS["augmentation"]) == 2 + len(AUG_GROUPS)
    with pytest.raises(ConfigError, match="unknown ablation grid"):
        variants_for("everything")


def test_variant_configs_pin_seed_and_family():
    runner = ExperimentRunner(None, tiny_train_config(), MetricsStore(), train_family="C")
    config = runner.config_for(Variant("RM", ("mask_strategy=random",)), seed=4)
    assert config.mask_strategy == "random"
    assert config.seed == 4
    assert config.train_families == ("C",)


def test_run_grid_adds_mean_row_per_variant(fake, tmp_path):
    store = MetricsStore(tmp_path / "ablation.csv")
    runner = ExperimentRunner(None, tiny_train_config(), store, seeds=(0, 1), out_dir=tmp_path)
    rows = runner.run_grid("pairing")

    assert [(r.variant, r.seed) for r in rows] == [
        ("unpaired", "0"),
        ("unpaired", "1"),
        ("unpaired", "mean"),
        ("paired", "0"),
        ("paired", "1"),
        ("paired", "mean"),
    ]
    assert rows[0].intra_auc == pytest.approx(0.9)
    assert rows[0].held_out_auc == pytest.approx(0.7)
    assert rows[2].intra_auc == pytest.approx(0.905)
    assert rows[2].held_out_auc == pytest.approx(0.705)
    assert list(store) == rows

    config, run_dir = fake.calls[0]
    assert not config.paired_aug
    assert run_dir == tmp_path / "pairing" / "unpaired_seed0"


def test_mean_ignores_missing_held_out_scores(monkeypatch):
    fake = FakeTraining(held_out=())
    monkeypatch.setattr(experiments, "train", fake.train)
    monkeypatch.setattr(experiments, "evaluate_cross_manip", fake.evaluate)
    runner = ExperimentRunner(None, tiny_train_config(), MetricsStore(), seeds=(0,))
    rows = runner.run_grid("weighting")
    assert all(math.isnan(row.held_out_auc) for row in rows)
    assert fake.calls[0][1] is None


def test_store_writes_csv(fake, tmp_path):
    store = MetricsStore()
    ExperimentRunner(None, tiny_train_config(), store).run_grid("weighting")
    path = store.write(tmp_path / "out" / "ablation.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ABLATION_FIELDS)
    assert lines[1] == "weighting,w/o weighting,0,0.900000,0.700000"
    assert len(lines) == 1 + 2 * 2
