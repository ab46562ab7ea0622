from __future__ import annotations

import math
import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import ConfigError, ShapeError
from cfm.core.tensor import Tensor
from cfm.services.plc import (
    PlcState,
    ProgressiveController,
    apply_mask,
    change_ratio,
    channel_importance,
    drop_count,
    drop_ratio,
    importance_mask,
    update_importance,
)


def _constant_maps(values) -> np.ndarray:
    return np.asarray(values, dtype=float)[:, None, None] * np.ones((1, 3, 3))


def test_importance_from_pooled_channels():
    anc = _constant_maps([0.0, 0.0])
    pos = _constant_maps([0.0, 1.0])
    neg = _constant_maps([1.0, 0.0])
    np.testing.assert_allclose(channel_importance(anc, pos, neg), [-1.0, 1.0])


def test_importance_sign_properties():
    rng = np.random.default_rng(0)
    anc, neg = rng.random((2, 4, 6, 5, 5))
    assert np.all(channel_importance(anc, anc, neg) <= 0.0)
    np.testing.assert_array_equal(channel_importance(anc, neg, neg), 0.0)


def test_importance_accepts_tensors_and_checks_shapes():
    maps = Tensor(np.zeros((2, 3, 4, 4)))
    assert channel_importance(maps, maps, maps).shape == (2, 3)
    with pytest.raises(ShapeError):
        channel_importance(np.zeros((3, 4, 4)), np.zeros((3, 4, 4)), np.zeros((2, 4, 4)))


def test_first_update_adopts_batch_mean():
    state = update_importance(PlcState(channels=2, beta=0.99), np.array([3.0, -1.0]))
    np.testing.assert_array_equal(state.m_star, [3.0, -1.0])


@pytest.mark.parametrize(
    ("beta", "expected"),
    [(1.0, [1.0, 1.0]), (0.0, [5.0, -3.0]), (0.99, [0.99 + 0.05, 0.99 - 0.03])],
)
def test_ema_of_importance(beta, expected):
    state = PlcState(channels=2, beta=beta)
    update_importance(state, np.ones(2))
    update_importance(state, np.array([5.0, -3.0]))
    np.testing.assert_allclose(state.m_star, expected)


def test_update_rejects_wrong_width():
    with pytest.raises(ShapeError):
        update_importance(PlcState(channels=3), np.zeros(2))


@pytest.mark.parametrize(
    ("epoch", "expected"),
    [
        (0, 0.5),
        (1, 0.5 * math.cos(math.pi / 30)),
        (10, 0.25),
        (14, 0.5 * math.cos(14 * math.pi / 30)),
        (15, 0.0),
        (29, 0.0),
    ],
)
def test_drop_ratio_schedule(epoch, expected):
    assert drop_ratio(epoch, 30) == pytest.approx(expected, abs=1e-12)


def test_drop_ratio_rejects_bad_epochs():
    with pytest.raises(ConfigError):
        drop_ratio(0, 0)
    with pytest.raises(ConfigError):
        drop_ratio(-1, 10)


def test_drop_count_floors():
    assert drop_count(16, 0.5) == 8
    assert drop_count(10, 0.3) == 3
    assert drop_count(16, 0.49) == 7
    assert drop_count(16, 0.0) == 0


def test_mask_drops_most_important_channels():
    m_star = np.array([0.1, 0.9, 0.2, 0.8])
    keep = importance_mask(m_star, 0.5)
    assert keep.tolist() == [True, False, True, False]

    state = PlcState(channels=4, current_mask=keep, rho=0.5)
    out = apply_mask(Tensor(np.ones((1, 4, 2, 2))), state)
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [2.0, 0.0, 2.0, 0.0])
    np.testing.assert_array_equal(state.dropped, [1, 3])


def test_ties_drop_highest_indices():
    assert importance_mask(np.zeros(4), 0.5).tolist() == [True, True, False, False]


def test_inverted_ranking_drops_least_important():
    m_star = np.array([0.1, 0.9, 0.2, 0.8])
    assert importance_mask(m_star, 0.5, invert=True).tolist() == [False, True, False, True]


def test_zero_rho_is_identity():
    features = Tensor(np.random.default_rng(1).random((2, 4, 3, 3)))
    state = PlcState(channels=4, current_mask=np.array([True, False, True, True]), rho=0.0)
    assert apply_mask(features, state) is features
    assert importance_mask(np.arange(4.0), 0.0).all()


def test_change_ratio_extremes():
    keep = np.array([True, True, False, False])
    assert change_ratio(keep, keep) == 0.0
    assert change_ratio(keep, ~keep) == 1.0
    assert change_ratio(keep, np.ones(4, dtype=bool)) == 0.0
    with pytest.raises(ShapeError):
        change_ratio(keep, np.ones(3, dtype=bool))


def test_controller_logs_nan_then_ratios():
    controller = ProgressiveController(4, beta=0.5)
    assert controller.begin_epoch(0, 10) == 0.5
    controller.observe(np.array([[0.1, 0.9, 0.2, 0.8]]), iteration=0)
    controller.observe(np.array([[0.9, 0.1, 0.8, 0.2], [0.9, 0.1, 0.8, 0.2]]), iteration=1)
    first, second = controller.state.change_ratio_log
    assert math.isnan(first.change_ratio)
    assert (second.iteration, second.rho) == (1, 0.5)
    assert 0.0 <= second.change_ratio <= 1.0


def test_controller_mask_follows_ema():
    controller = ProgressiveController(4, beta=0.99)
    controller.begin_epoch(0, 10)
    keep = controller.observe(np.array([0.1, 0.9, 0.2, 0.8]), iteration=0)
    assert keep.tolist() == [True, False, True, False]
    # one opposite batch barely moves a slow EMA
    keep = controller.observe(np.array([0.9, 0.1, 0.8, 0.2]), iteration=1)
    assert keep.tolist() == [True, False, True, False]


def test_random_strategy_change_ratio_is_about_one_half():
    controller = ProgressiveController(16, strategy="random", seed=3)
    controller.begin_epoch(0, 10)
    for iteration in range(400):
        controller.observe(np.zeros(16), iteration)
    ratios = [record.change_ratio for record in controller.state.change_ratio_log[1:]]
    assert abs(np.mean(ratios) - 0.5) < 0.05


def test_random_strategy_is_seeded_per_iteration():
    first = ProgressiveController(16, strategy="random", seed=3)
    second = ProgressiveController(16, strategy="random", seed=3)
    for controller in (first, second):
        controller.begin_epoch(0, 10)
    np.testing.assert_array_equal(first.observe(np.zeros(16), 7), second.observe(np.ones(16), 7))


def test_random_strategy_stops_at_half_training():
    controller = ProgressiveController(16, strategy="random")
    assert controller.begin_epoch(4, 10) == 0.5
    assert controller.begin_epoch(5, 10) == 0.0


def test_unknown_strategy_rejected():
    with pytest.raises(ConfigError, match="strategy"):
        ProgressiveController(4, strategy="greedy")


def test_rescale_preserves_pooled_value_of_kept_channels():
    features = Tensor(np.random.default_rng(2).random((2, 4, 3, 3)))
    keep = np.array([True, False, True, True])
    state = PlcState(channels=4, current_mask=keep, rho=0.25)
    pooled = apply_mask(features, state).data.mean(axis=(2, 3))
    expected = features.data.mean(axis=(2, 3)) / 0.75
    np.testing.assert_allclose(pooled[:, keep], expected[:, keep], rtol=1e-14)
    np.testing.assert_array_equal(pooled[:, 1], 0.0)
