from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import DatasetError, ShapeError
from cfm.services.augment import AugSpec
from cfm.services.synthgen import generate_real_video, manipulate_video
from cfm.services.triplet import (
    TripletOptions,
    build_triplet,
    difference_mask,
    patch_labels,
    stack_batch,
)
from tests.synthetic import tiny_dataset, tiny_train_config

OPTIONS = TripletOptions(feature_size=4)


def _fake_ids(dataset):
    return [entry.id for entry in dataset.manifest if entry.label == "fake"]


def test_options_follow_training_config():
    config = tiny_train_config("paired_aug=false", "loss.t_mask=0.4")
    options = TripletOptions.from_config(config)
    assert options.feature_size == config.model.feature_size == 4
    assert options.t_mask == 0.4
    assert not options.paired_aug


def test_real_anchor_gets_fake_negative_from_same_source():
    dataset = tiny_dataset()
    sample = build_triplet(dataset, "v0000", np.random.default_rng(0), OPTIONS)
    negative = dataset.manifest.get(sample.negative_id)
    assert sample.anchor_label == 0
    assert sample.negative_label == 1
    assert negative.label == "fake" and negative.source_id == "v0000"
    assert sample.anchor_index != sample.positive_index
    assert sample.negative_index == sample.anchor_index
    assert not sample.patch_labels_anc.any() and not sample.patch_labels_pos.any()


def test_fake_anchor_gets_its_source_as_negative():
    dataset = tiny_dataset()
    fake_id = _fake_ids(dataset)[0]
    sample = build_triplet(dataset, fake_id, np.random.default_rng(1), OPTIONS)
    assert sample.anchor_label == 1
    assert sample.negative_id == dataset.manifest.get(fake_id).source_id
    assert not sample.patch_labels_neg.any()


def test_same_seed_builds_same_triplet():
    dataset = tiny_dataset()
    first = build_triplet(dataset, "v0001", np.random.default_rng(4), OPTIONS)
    second = build_triplet(dataset, "v0001", np.random.default_rng(4), OPTIONS)
    assert first.negative_id == second.negative_id
    np.testing.assert_array_equal(first.x_anc, second.x_anc)
    np.testing.assert_array_equal(first.x_neg, second.x_neg)


def test_paired_augmentation_shares_one_spec():
    dataset = tiny_dataset()
    sample = build_triplet(dataset, "v0002", np.random.default_rng(2), OPTIONS)
    assert sample.aug_spec_neg is sample.aug_spec_shared


def test_unpaired_augmentation_draws_separately():
    dataset = tiny_dataset()
    options = TripletOptions(feature_size=4, paired_aug=False)
    specs = [build_triplet(dataset, "v0002", np.random.default_rng(seed), options) for seed in range(20)]
    assert any(s.aug_spec_neg != s.aug_spec_shared for s in specs)


def test_without_augmentation_frames_are_untouched():
    dataset = tiny_dataset()
    options = TripletOptions(feature_size=4, use_aug=False)
    sample = build_triplet(dataset, "v0000", np.random.default_rng(3), options)
    assert sample.aug_spec_shared == AugSpec()
    np.testing.assert_array_equal(sample.x_anc, dataset.frame("v0000", sample.anchor_index))
    np.testing.assert_array_equal(sample.x_neg, dataset.frame(sample.negative_id, sample.anchor_index))


def test_diff_mask_support_stays_inside_manipulated_region():
    dataset = tiny_dataset()
    options = TripletOptions(feature_size=4, use_aug=False)
    for fake_id in _fake_ids(dataset):
        sample = build_triplet(dataset, fake_id, np.random.default_rng(5), options)
        truth = dataset.mask(fake_id, sample.anchor_index) > 0
        assert not np.any((sample.diff_mask > 0) & ~truth)
        pooled_truth = truth.reshape(4, 8, 4, 8).mean(axis=(1, 3))
        assert not np.any(sample.patch_labels_anc & (pooled_truth == 0))


def test_missing_counterpart_is_reported():
    dataset = tiny_dataset(families=("A",))
    with pytest.raises(DatasetError, match="no counterpart"):
        build_triplet(dataset, "v0000", np.random.default_rng(0), TripletOptions(feature_size=4, families=("B",)))


def test_difference_mask_of_identical_frames_is_zero():
    frame = np.random.default_rng(0).random((8, 8, 3))
    np.testing.assert_array_equal(difference_mask(frame, frame.copy()), np.zeros((8, 8)))


def test_difference_mask_peaks_at_single_changed_pixel():
    real = np.zeros((8, 8, 3))
    fake = real.copy()
    fake[2, 5] = 0.3
    mask = difference_mask(fake, real)
    assert mask[2, 5] == pytest.approx(1.0)
    assert mask.sum() == pytest.approx(1.0)


def test_difference_mask_rejects_mismatched_frames():
    with pytest.raises(ShapeError):
        difference_mask(np.zeros((8, 8, 3)), np.zeros((4, 8, 3)))


def test_patch_labels_trivial_masks():
    assert not patch_labels(np.zeros((16, 16)), 4, 4).any()
    assert patch_labels(np.ones((16, 16)), 4, 4).all()


def test_patch_labels_match_cell_by_cell_average():
    yy, xx = np.mgrid[0:32, 0:32]
    mask = (((yy - 13.5) / 9.0) ** 2 + ((xx - 18.0) / 6.5) ** 2 <= 1.0).astype(float)
    labels = patch_labels(mask, 8, 8, t_mask=0.25)
    for r in range(8):
        for c in range(8):
            cell = mask[r * 4 : (r + 1) * 4, c * 4 : (c + 1) * 4]
            assert labels[r, c] == (cell.mean() > 0.25)


def test_patch_labels_require_divisible_grid():
    with pytest.raises(ShapeError, match="not divisible"):
        patch_labels(np.zeros((10, 10)), 4, 4)


def test_stack_batch_shapes():
    dataset = tiny_dataset()
    rng = np.random.default_rng(6)
    samples = [build_triplet(dataset, video_id, rng, OPTIONS) for video_id in ("v0000", _fake_ids(dataset)[0])]
    batch = stack_batch(samples)
    assert len(batch) == 2
    assert batch.anchors.shape == (2, 3, 32, 32)
    assert batch.patch_labels_anc.shape == (2, 16)
    assert batch.labels.tolist() == [0.0, 1.0]


def test_empty_batch_rejected():
    with pytest.raises(DatasetError):
        stack_batch([])


def test_texture_fakes_difference_mask_recovers_the_region():
    ious = []
    for seed in range(20):
        real = generate_real_video([seed, 40])
        fake = manipulate_video(real, "A", [seed, 41])
        found = difference_mask(fake.frames[0], real.frames[0]) > 0.0
        truth = fake.masks[0]
        ious.append(np.count_nonzero(found & truth) / np.count_nonzero(found | truth))
    assert min(ious) >= 0.9
