from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.config import FAMILIES, SynthConfig
from cfm.core.errors import DatasetError
from cfm.services.synthgen import (
    generate_real_video,
    generate_videos,
    held_out_sources,
    manipulate_video,
    quantize,
)
from tests.synthetic import tiny_synth_config


def test_same_seed_gives_bit_identical_video():
    first = generate_real_video([5, 1])
    second = generate_real_video([5, 1])
    assert len(first.frames) == 8
    for a, b in zip(first.frames, second.frames):
        assert a.tobytes() == b.tobytes()


def test_frames_are_quantized_and_in_range():
    video = generate_real_video(9)
    for frame in video.frames:
        assert frame.shape == (64, 64, 3)
        assert frame.min() >= 0.0 and frame.max() <= 1.0
        np.testing.assert_array_equal(frame, quantize(frame))


def test_drift_keeps_first_and_last_frame_close():
    video = generate_real_video(12)
    assert abs(video.frames[0].mean() - video.frames[-1].mean()) < 0.1
    assert not np.array_equal(video.frames[0], video.frames[-1])


def test_short_videos_rejected():
    config = SynthConfig.model_construct(**{**SynthConfig().model_dump(), "frames": 2})
    with pytest.raises(DatasetError, match="at least 3 frames"):
        generate_real_video(0, config)


@pytest.mark.parametrize("family", FAMILIES)
def test_fake_equals_real_outside_mask(family):
    for seed in range(3):
        real = generate_real_video([seed, 0])
        fake = manipulate_video(real, family, [seed, 1])
        assert fake.label == "fake" and fake.source_id == real.id and fake.family == family
        for real_frame, fake_frame, mask in zip(real.frames, fake.frames, fake.masks):
            outside = ~mask
            np.testing.assert_array_equal(fake_frame[outside], real_frame[outside])
            assert 0.02 <= mask.mean() <= 0.40
            assert np.abs(fake_frame[mask] - real_frame[mask]).mean() > 0.02


def test_families_differ_inside_the_region():
    real = generate_real_video([4, 0])
    texture = manipulate_video(real, "A", [4, 1])
    blur = manipulate_video(real, "B", [4, 1])
    np.testing.assert_array_equal(texture.masks[0], blur.masks[0])
    inside = texture.masks[0]
    assert not np.array_equal(texture.frames[0][inside], blur.frames[0][inside])


def test_region_follows_the_drift_across_frames():
    real = generate_real_video([6, 0])
    fake = manipulate_video(real, "C", [6, 3])
    assert all(mask.any() for mask in fake.masks)


def test_unknown_family_rejected():
    with pytest.raises(DatasetError, match="family"):
        manipulate_video(generate_real_video(0), "E", 1)


def test_impossible_coverage_is_rejected_after_retries():
    config = SynthConfig(min_coverage=0.9, max_coverage=1.0, max_retries=2)
    with pytest.raises(DatasetError, match="after 2 attempts"):
        manipulate_video(generate_real_video(0, config), "A", 1, config)


def test_generate_videos_orders_sources_then_families():
    config = tiny_synth_config(sources=2, families=("B", "D"))
    ids = [video.id for video in generate_videos(config)]
    assert ids == ["v0000", "v0000_B", "v0000_D", "v0001", "v0001_B", "v0001_D"]


def test_held_out_sources_are_seeded():
    config = SynthConfig(sources=40, seed=2)
    held_out = held_out_sources(config)
    assert held_out == held_out_sources(SynthConfig(sources=40, seed=2))
    assert len(held_out) == 8
    assert held_out != held_out_sources(SynthConfig(sources=40, seed=3))


def test_global_mean_does_not_separate_real_from_fake():
    videos = generate_videos(SynthConfig(sources=6, seed=11))
    real = np.mean([frame.mean() for video in videos if not video.is_fake for frame in video.frames])
    fake = np.mean([frame.mean() for video in videos if video.is_fake for frame in video.frames])
    assert abs(real - fake) < 0.01
