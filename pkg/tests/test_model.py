from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import ShapeError
from cfm.core.tensor import Tensor, get_tape
from cfm.services.model import STUDENT, TEACHER, CfmModel, ema_update, init_params
from tests.synthetic import tiny_train_config

CONFIG = tiny_train_config().model


def _images(count: int = 2, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((count, 3, 32, 32))


def test_init_is_seeded():
    first, second, other = init_params(CONFIG, 5), init_params(CONFIG, 5), init_params(CONFIG, 6)
    for name in first:
        np.testing.assert_array_equal(first[name].data, second[name].data)
    assert not np.array_equal(first["local.weight"].data, other["local.weight"].data)


def test_teacher_mirrors_student_without_classifier():
    model = CfmModel(CONFIG, seed=1)
    assert set(model.student) - set(model.teacher) == {"classifier.weight", "classifier.bias"}
    assert not any(t.requires_grad for t in model.teacher.values())
    assert all(t.requires_grad for t in model.parameters())


def test_forward_shapes_and_unit_norms():
    model = CfmModel(CONFIG, seed=1)
    # non-zero biases keep every embedding away from the zero vector
    model.student["global.fc2.bias"].data[:] = 0.1
    model.student["local.bias"].data[:] = 0.1
    features = model.encode(STUDENT, _images())
    assert features.shape == (2, 8, 4, 4)
    z_g = model.project_global(STUDENT, features)
    z_l = model.embed_local(STUDENT, features)
    assert z_g.shape == (2, 4)
    assert z_l.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(np.linalg.norm(z_g.data, axis=-1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(z_l.data, axis=1), 1.0)
    assert model.classify(features).shape == (2,)


def test_student_and_teacher_agree_at_init():
    model = CfmModel(CONFIG, seed=2)
    images = _images(seed=3)
    student = model.project_global(STUDENT, model.encode(STUDENT, images))
    teacher = model.project_global(TEACHER, model.encode(TEACHER, images))
    np.testing.assert_array_equal(student.data, teacher.data)


def test_teacher_branch_is_never_taped():
    model = CfmModel(CONFIG, seed=2)
    features = model.encode(TEACHER, _images())
    z_l = model.embed_local(TEACHER, features)
    assert len(get_tape()) == 0
    assert not features.requires_grad and not z_l.requires_grad


def test_student_branch_is_taped():
    model = CfmModel(CONFIG, seed=2)
    features = model.encode(STUDENT, _images())
    assert features.requires_grad
    assert len(get_tape()) > 0


def test_zero_classifier_predicts_one_half():
    model = CfmModel(CONFIG, seed=4)
    model.student["classifier.weight"].data[:] = 0.0
    np.testing.assert_allclose(model.predict(_images(5), batch_size=2), np.full(5, 0.5))
    assert len(get_tape()) == 0


def test_predict_of_nothing_is_empty():
    assert CfmModel(CONFIG).predict(np.zeros((0, 3, 32, 32))).shape == (0,)


def test_wrong_image_size_rejected():
    with pytest.raises(ShapeError, match=r"\[N,3,32,32\]"):
        CfmModel(CONFIG).encode(STUDENT, np.zeros((1, 3, 16, 16)))


def test_unknown_branch_rejected():
    with pytest.raises(ValueError, match="unknown branch"):
        CfmModel(CONFIG).branch("critic")


def test_ema_endpoints():
    model = CfmModel(CONFIG, seed=0)
    for tensor in model.student.values():
        tensor.data += 1.0
    before = {name: t.data.copy() for name, t in model.teacher.items()}
    model.ema_update(1.0)
    for name, tensor in model.teacher.items():
        np.testing.assert_array_equal(tensor.data, before[name])
    model.ema_update(0.0)
    for name, tensor in model.teacher.items():
        np.testing.assert_array_equal(tensor.data, model.student[name].data)


def test_repeated_ema_converges_geometrically():
    teacher = {"w": Tensor(np.array([2.0, -1.0]))}
    student = {"w": Tensor(np.array([0.5, 0.5]))}
    for _ in range(100):
        ema_update(teacher, student, 0.999)
    expected = 0.5 + (np.array([2.0, -1.0]) - 0.5) * 0.999**100
    np.testing.assert_allclose(teacher["w"].data, expected, atol=1e-9)


def test_ema_rejects_bad_inputs():
    teacher = {"w": Tensor(np.zeros(2))}
    with pytest.raises(ValueError, match="alpha"):
        ema_update(teacher, {"w": Tensor(np.zeros(2))}, 1.5)
    with pytest.raises(ShapeError):
        ema_update(teacher, {"w": Tensor(np.zeros(3))}, 0.5)


def test_clone_is_independent():
    model = CfmModel(CONFIG, seed=0)
    copy = model.clone()
    copy.student["local.bias"].data += 1.0
    assert not np.array_equal(copy.student["local.bias"].data, model.student["local.bias"].data)
    assert model.architecture() == copy.architecture()


@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.9, 0.999, 1.0])
def test_teacher_stays_inside_the_student_history(alpha):
    rng = np.random.default_rng(7)
    start = rng.standard_normal(4)
    teacher = {"w": Tensor(start.copy())}
    student = {"w": Tensor(start.copy())}
    low, high = start.copy(), start.copy()
    for _ in range(200):
        student["w"].data[:] = 3.0 * rng.standard_normal(4)
        low = np.minimum(low, student["w"].data)
        high = np.maximum(high, student["w"].data)
        ema_update(teacher, student, alpha)
        assert np.all(low - 1e-12 <= teacher["w"].data)
        assert np.all(teacher["w"].data <= high + 1e-12)


def test_encoder_ignores_a_per_image_colour_offset():
    model = CfmModel(CONFIG, seed=3)
    images = _images(seed=5)
    shifted = images + np.array([0.1, -0.05, 0.2])[None, :, None, None]
    np.testing.assert_allclose(
        model.encode(TEACHER, shifted).data, model.encode(TEACHER, images).data, atol=1e-10
    )
