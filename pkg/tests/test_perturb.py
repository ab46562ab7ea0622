from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import AugmentError
from cfm.services.perturb import (
    DEFAULT_SEVERITY,
    KINDS,
    LADDERS,
    PerturbSpec,
    apply_perturbation,
    ladder_csv,
    psnr,
)
from cfm.services.synthgen import generate_real_video

ROOT = pathlib.Path(__file__).resolve().parents[1]
NESTED_KINDS = ("saturation", "contrast", "block", "multiplicative-noise", "pixelate")


@pytest.fixture(scope="module")
def frame() -> np.ndarray:
    return generate_real_video(11).frames[0]


def test_published_ladder_matches_code():
    assert (ROOT / "docs" / "perturbations.csv").read_text() == ladder_csv()


def test_every_kind_has_five_severities():
    assert tuple(LADDERS) == KINDS
    for kind in KINDS:
        assert len(LADDERS[kind][1]) == 5
    assert PerturbSpec("compress").parameter == 30
    assert DEFAULT_SEVERITY == 3


@pytest.mark.parametrize("kind", NESTED_KINDS)
def test_psnr_never_increases_with_severity(frame, kind):
    values = [psnr(frame, apply_perturbation(frame, PerturbSpec(kind, severity, seed=5))) for severity in range(1, 6)]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(values, values[1:])), values


@pytest.mark.parametrize("kind", KINDS)
def test_strongest_severity_degrades_most(frame, kind):
    mild = psnr(frame, apply_perturbation(frame, PerturbSpec(kind, 1, seed=5)))
    harsh = psnr(frame, apply_perturbation(frame, PerturbSpec(kind, 5, seed=5)))
    assert harsh < mild


@pytest.mark.parametrize("kind", KINDS)
def test_outputs_stay_in_unit_range(frame, kind):
    out = apply_perturbation(frame, PerturbSpec(kind, 5, seed=2))
    assert out.shape == frame.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_saturation_leaves_grey_untouched():
    grey = np.full((8, 8, 3), 0.4)
    for severity in range(1, 6):
        np.testing.assert_allclose(apply_perturbation(grey, PerturbSpec("saturation", severity)), grey, atol=1e-12)


def test_mildest_block_covers_under_a_tenth():
    image = np.ones((64, 64, 3))
    out = apply_perturbation(image, PerturbSpec("block", 1, seed=9))
    occluded = float((out == 0.0).all(axis=2).mean())
    assert 0.0 < occluded < 0.1


def test_pixelate_handles_partial_cells():
    image = np.random.default_rng(0).random((10, 10, 3))
    out = apply_perturbation(image, PerturbSpec("pixelate", 2))  # 4x4 cells
    assert out.shape == image.shape
    np.testing.assert_allclose(out[8:, 8:], image[8:, 8:].mean(axis=(0, 1)) * np.ones((2, 2, 1)))
    constant = np.full((10, 10, 3), 0.25)
    np.testing.assert_allclose(apply_perturbation(constant, PerturbSpec("pixelate", 5)), constant)


@pytest.mark.parametrize("kind", ["block", "multiplicative-noise"])
def test_seeded_kinds_are_reproducible(frame, kind):
    first = apply_perturbation(frame, PerturbSpec(kind, 3, seed=21))
    np.testing.assert_array_equal(first, apply_perturbation(frame, PerturbSpec(kind, 3, seed=21)))


def test_psnr_of_identical_images_is_infinite(frame):
    assert psnr(frame, frame) == float("inf")


def test_invalid_specs_rejected():
    with pytest.raises(AugmentError, match="unknown perturbation"):
        PerturbSpec("rain")
    with pytest.raises(AugmentError, match="severity"):
        PerturbSpec("contrast", 6)
