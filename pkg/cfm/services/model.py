"""Student/teacher convolutional encoder, mapping heads and classifier.

Parameters live in flat ``name -> Tensor`` dictionaries.  The teacher holds
copies of the encoder, global head and local head; only the student has a
classifier.  Teacher tensors never require gradients and are only changed by
:func:`ema_update`.
"""

from __future__ import annotations

import copy
import logging
from typing import Dict, Iterator, List, Mapping, Tuple, Union

import numpy as np

from cfm.core import ops
from cfm.core.config import ModelConfig
from cfm.core.errors import ShapeError
from cfm.core.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]
STUDENT = "student"
TEACHER = "teacher"
CLASSIFIER_PREFIX = "classifier."


def _he(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_params(config: ModelConfig, seed: int) -> Params:
    """Seeded He-initialized student parameters."""

    rng = np.random.default_rng([seed, 31337])
    params: Params = {}
    in_channels = 3
    for index, out_channels in enumerate(config.channels):
        params[f"encoder.conv{index}.weight"] = Tensor(
            _he(rng, (out_channels, in_channels, 3, 3), in_channels * 9), requires_grad=True
        )
        params[f"encoder.conv{index}.bias"] = Tensor(np.zeros(out_channels), requires_grad=True)
        in_channels = out_channels
    channels = config.feature_channels
    params["global.fc1.weight"] = Tensor(_he(rng, (config.hidden, channels), channels), requires_grad=True)
    params["global.fc1.bias"] = Tensor(np.zeros(config.hidden), requires_grad=True)
    params["global.fc2.weight"] = Tensor(
        _he(rng, (config.c_star, config.hidden), config.hidden), requires_grad=True
    )
    params["global.fc2.bias"] = Tensor(np.zeros(config.c_star), requires_grad=True)
    params["local.weight"] = Tensor(_he(rng, (config.c_star, channels, 1, 1), channels), requires_grad=True)
    params["local.bias"] = Tensor(np.zeros(config.c_star), requires_grad=True)
    params["classifier.weight"] = Tensor(
        rng.normal(0.0, np.sqrt(1.0 / channels), size=(1, channels)), requires_grad=True
    )
    params["classifier.bias"] = Tensor(np.zeros(1), requires_grad=True)
    return params


def ema_update(teacher: Mapping[str, Tensor], student: Mapping[str, Tensor], alpha: float) -> None:
    """``p_t <- alpha * p_t + (1 - alpha) * p_s`` for every teacher parameter."""

    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    for name, target in teacher.items():
        source = student.get(name)
        if source is None or source.shape != target.shape:
            raise ShapeError(
                f"ema_update: teacher {name} {target.shape} has no student match "
                f"({None if source is None else source.shape})"
            )
        target.data *= alpha
        target.data += (1.0 - alpha) * source.data


class CfmModel:
    """Student and EMA teacher sharing one architecture."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.student: Params = init_params(self.config, seed)
        self.teacher: Params = {}
        for name, tensor in self.student.items():
            if name.startswith(CLASSIFIER_PREFIX):
                continue
            self.teacher[name] = Tensor(tensor.data.copy())

    # parameters ------------------------------------------------------------

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.student.items())

    def parameters(self) -> List[Tensor]:
        return list(self.student.values())

    def zero_grad(self) -> None:
        for tensor in self.student.values():
            tensor.zero_grad()

    def architecture(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self.student.items()}

    def branch(self, name: str) -> Params:
        if name == STUDENT:
            return self.student
        if name == TEACHER:
            return self.teacher
        raise ValueError(f"unknown branch {name!r}")

    def clone(self) -> "CfmModel":
        return copy.deepcopy(self)

    def ema_update(self, alpha: float) -> None:
        ema_update(self.teacher, self.student, alpha)

    def __iter__(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.student.items())

    # forward ---------------------------------------------------------------

    def _as_tensor(self, images: Union[Tensor, np.ndarray]) -> Tensor:
        """Validated input with each image's channel means removed, times ``input_scale``.

        Images are data, so the standardized copy is a constant leaf.
        """

        data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
        size = self.config.image_size
        if data.ndim not in (3, 4) or data.shape[-3:] != (3, size, size):
            raise ShapeError(f"encode: expected [N,3,{size},{size}] images, got {data.shape}")
        centred = data - data.mean(axis=(-2, -1), keepdims=True)
        return Tensor(centred * self.config.input_scale)

    def _encode(self, params: Params, x: Tensor) -> Tensor:
        for index in range(len(self.config.channels)):
            x = ops.conv2d(
                x,
                params[f"encoder.conv{index}.weight"],
                params[f"encoder.conv{index}.bias"],
                stride=2,
                padding=1,
            )
            x = ops.relu(x)
        return x

    def encode(self, branch: str, images: Union[Tensor, np.ndarray]) -> Tensor:
        """Feature map ``[N, C, h, w]``; the teacher branch is never taped."""

        x = self._as_tensor(images)
        if branch == TEACHER:
            with no_grad():
                return self._encode(self.teacher, x)
        return self._encode(self.branch(branch), x)

    def _global(self, params: Params, features: Tensor) -> Tensor:
        pooled = ops.global_average_pool(features)
        hidden = ops.relu(ops.linear(pooled, params["global.fc1.weight"], params["global.fc1.bias"]))
        mapped = ops.linear(hidden, params["global.fc2.weight"], params["global.fc2.bias"])
        return ops.l2_normalize(mapped, axis=-1)

    def project_global(self, branch: str, features: Tensor) -> Tensor:
        """Unit-norm global embedding ``[N, C*]`` of masked features."""

        if branch == TEACHER:
            with no_grad():
                return self._global(self.teacher, features)
        return self._global(self.branch(branch), features)

    def _local(self, params: Params, features: Tensor) -> Tensor:
        mapped = ops.conv2d(features, params["local.weight"], params["local.bias"])
        return ops.l2_normalize(mapped, axis=-3)

    def embed_local(self, branch: str, features: Tensor) -> Tensor:
        """Per-location unit-norm embeddings ``[N, C*, h, w]``."""

        if branch == TEACHER:
            with no_grad():
                return self._local(self.teacher, features)
        return self._local(self.branch(branch), features)

    def classify_logit(self, features: Tensor) -> Tensor:
        pooled = ops.global_average_pool(features)
        logits = ops.linear(pooled, self.student["classifier.weight"], self.student["classifier.bias"])
        return ops.reshape(logits, logits.shape[:-1])

    def classify(self, features: Tensor) -> Tensor:
        """Fake probability per image."""

        return ops.sigmoid(self.classify_logit(features))

    def predict(self, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Fake probabilities for channel-first ``images`` without taping."""

        scores = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                features = self.encode(STUDENT, images[start : start + batch_size])
                scores.append(self.classify(features).data.reshape(-1))
        return np.concatenate(scores) if scores else np.zeros(0)


__all__ = [
    "CLASSIFIER_PREFIX",
    "CfmModel",
    "STUDENT",
    "TEACHER",
    "ema_update",
    "init_params",
]
