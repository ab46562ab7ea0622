"""The fixed operation set the CFM model is built from.

Each op is a :class:`~cfm.core.tensor.Function` with an explicit backward
rule.  Lower-case wrappers (``add``, ``conv2d`` ...) are the public surface;
:func:`forward` dispatches by op name for callers that pick ops dynamically.
There is no broadcasting: elementwise operands must share a shape.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ShapeError
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


def _require_same_shape(name: str, *arrays: np.ndarray) -> None:
    shapes = [a.shape for a in arrays]
    if any(shape != shapes[0] for shape in shapes[1:]):
        raise ShapeError(f"{name}: operand shapes {shapes} differ")


def _require_rank(name: str, array: np.ndarray, ranks: Sequence[int], what: str = "input") -> None:
    if array.ndim not in ranks:
        raise ShapeError(f"{name}: {what} rank {array.ndim} (shape {array.shape}) not in {tuple(ranks)}")


# elementwise ---------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a + b

    def backward(self, grad, a, b):
        return grad, grad


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a - b

    def backward(self, grad, a, b):
        return grad, -grad


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return a * b

    def backward(self, grad, a, b):
        return grad * b, grad * a


class AddScalar(Function):
    name = "add_scalar"

    def forward(self, x):
        return x + float(self.params["value"])

    def backward(self, grad, x):
        return (grad,)


class Scale(Function):
    name = "scale"

    def forward(self, x):
        return x * float(self.params["factor"])

    def backward(self, grad, x):
        return (grad * float(self.params["factor"]),)


class Relu(Function):
    name = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad, x):
        # subgradient at 0 is 0
        return (grad * (x > 0.0),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        out = expit(x)
        self.saved["out"] = out
        return out

    def backward(self, grad, x):
        out = self.saved["out"]
        return (grad * out * (1.0 - out),)


class Log(Function):
    name = "log"

    def forward(self, x):
        floor = float(self.params.get("floor", LOG_FLOOR))
        return np.log(np.maximum(x, floor))

    def backward(self, grad, x):
        floor = float(self.params.get("floor", LOG_FLOOR))
        return (np.where(x > floor, grad / np.maximum(x, floor), 0.0),)


class Abs(Function):
    name = "abs"

    def forward(self, x):
        return np.abs(x)

    def backward(self, grad, x):
        return (grad * np.sign(x),)


class ChannelMaskScale(Function):
    """Multiply channel ``c`` of a ``[..., C, H, W]`` map by ``gate[c]``.

    The gate is a constant: dropped channels carry zero gradient and kept
    channels carry the rescale factor.
    """

    name = "channel_mask_scale"

    def forward(self, x):
        gate = np.asarray(self.params["gate"], dtype=np.float64)
        _require_rank(self.name, x, (3, 4))
        if gate.shape != (x.shape[-3],):
            raise ShapeError(f"{self.name}: gate shape {gate.shape} does not match channels of {x.shape}")
        self.saved["gate"] = gate[:, None, None]
        return x * self.saved["gate"]

    def backward(self, grad, x):
        return (grad * self.saved["gate"],)


# reductions ----------------------------------------------------------------


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape).copy()
    return np.broadcast_to(np.expand_dims(grad, axis), shape).copy()


class Sum(Function):
    name = "sum"

    def forward(self, x):
        return np.sum(x, axis=self.params.get("axis"))

    def backward(self, grad, x):
        return (_expand_reduced(grad, x.shape, self.params.get("axis")),)


class Mean(Function):
    name = "mean"

    def forward(self, x):
        axis = self.params.get("axis")
        if x.size == 0:
            raise ShapeError(f"{self.name}: empty input")
        return np.mean(x, axis=axis)

    def backward(self, grad, x):
        axis = self.params.get("axis")
        count = x.size if axis is None else x.shape[axis]
        return (_expand_reduced(grad, x.shape, axis) / count,)


class GlobalAveragePool(Function):
    """``[..., C, H, W] -> [..., C]``."""

    name = "global_average_pool"

    def forward(self, x):
        _require_rank(self.name, x, (3, 4))
        return x.mean(axis=(-2, -1))

    def backward(self, grad, x):
        height, width = x.shape[-2:]
        return (np.broadcast_to(grad[..., None, None], x.shape) / (height * width),)


class L2Normalize(Function):
    """Unit-normalize along ``axis``; zero vectors map to zero with zero gradient."""

    name = "l2_normalize"

    def forward(self, x):
        axis = self.params.get("axis", -1)
        norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
        safe = np.where(norm > 0.0, norm, 1.0)
        out = np.where(norm > 0.0, x / safe, 0.0)
        self.saved.update(norm=norm, safe=safe, out=out)
        return out

    def backward(self, grad, x):
        axis = self.params.get("axis", -1)
        norm, safe, out = self.saved["norm"], self.saved["safe"], self.saved["out"]
        projected = grad - out * np.sum(grad * out, axis=axis, keepdims=True)
        return (np.where(norm > 0.0, projected / safe, 0.0),)


class Dot(Function):
    """Inner product over the last axis."""

    name = "dot"

    def forward(self, a, b):
        _require_same_shape(self.name, a, b)
        return np.sum(a * b, axis=-1)

    def backward(self, grad, a, b):
        g = grad[..., None]
        return g * b, g * a


# linear algebra ------------------------------------------------------------


class Linear(Function):
    """``x[..., D] @ w[O, D].T + b[O]``."""

    name = "linear"

    def forward(self, x, w, b=None):
        _require_rank(self.name, w, (2,), "weight")
        if x.shape[-1] != w.shape[1]:
            raise ShapeError(f"{self.name}: input {x.shape} incompatible with weight {w.shape}")
        if b is not None and b.shape != (w.shape[0],):
            raise ShapeError(f"{self.name}: bias {b.shape} incompatible with weight {w.shape}")
        out = x @ w.T
        return out if b is None else out + b

    def backward(self, grad, x, w, b=None):
        g2 = grad.reshape(-1, w.shape[0])
        x2 = x.reshape(-1, w.shape[1])
        grads = [grad @ w, g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads


class MatMul(Function):
    """Batched matrix product ``a[..., n, k] @ b[..., k, m]`` with equal batch dims."""

    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"{self.name}: shapes {a.shape} and {b.shape} are incompatible")
        return a @ b

    def backward(self, grad, a, b):
        return grad @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ grad


class Conv2d(Function):
    """Direct 2-D cross-correlation with zero padding.

    ``x`` is ``[N, Cin, H, W]`` (or unbatched ``[Cin, H, W]``), ``w`` is
    ``[Cout, Cin, k, k]``, ``b`` optional ``[Cout]``.
    """

    name = "conv2d"

    def forward(self, x, w, b=None):
        stride = int(self.params.get("stride", 1))
        padding = int(self.params.get("padding", 0))
        if stride not in (1, 2):
            raise ShapeError(f"{self.name}: stride {stride} not supported")
        _require_rank(self.name, x, (3, 4))
        _require_rank(self.name, w, (4,), "weight")
        unbatched = x.ndim == 3
        xb = x[None] if unbatched else x
        if xb.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
            raise ShapeError(f"{self.name}: input {x.shape} incompatible with weight {w.shape}")
        if b is not None and b.shape != (w.shape[0],):
            raise ShapeError(f"{self.name}: bias {b.shape} incompatible with weight {w.shape}")
        k = w.shape[2]
        padded = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padded.shape[2] < k or padded.shape[3] < k:
            raise ShapeError(f"{self.name}: kernel {k} larger than padded input {padded.shape}")
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
        if b is not None:
            out = out + b[None, :, None, None]
        self.saved.update(windows=windows, padded_shape=padded.shape, unbatched=unbatched)
        return out[0] if unbatched else out

    def backward(self, grad, x, w, b=None):
        stride = int(self.params.get("stride", 1))
        padding = int(self.params.get("padding", 0))
        windows = self.saved["windows"]
        unbatched = self.saved["unbatched"]
        g = grad[None] if unbatched else grad
        k = w.shape[2]
        out_h, out_w = g.shape[2], g.shape[3]

        grad_w = np.einsum("nohw,nchwij->ocij", g, windows, optimize=True)
        grad_padded = np.zeros(self.saved["padded_shape"])
        for i in range(k):
            for j in range(k):
                grad_padded[
                    :,
                    :,
                    i : i + stride * (out_h - 1) + 1 : stride,
                    j : j + stride * (out_w - 1) + 1 : stride,
                ] += np.einsum("nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
        height, width = grad_padded.shape[2] - 2 * padding, grad_padded.shape[3] - 2 * padding
        grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        if unbatched:
            grad_x = grad_x[0]
        grads = [np.ascontiguousarray(grad_x), grad_w]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads


# structural ----------------------------------------------------------------


class Reshape(Function):
    name = "reshape"

    def forward(self, x):
        shape = tuple(self.params["shape"])
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"{self.name}: cannot reshape {x.shape} into {shape}") from exc

    def backward(self, grad, x):
        return (grad.reshape(x.shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, x):
        axes = tuple(self.params["axes"])
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"{self.name}: axes {axes} invalid for shape {x.shape}")
        return np.ascontiguousarray(np.transpose(x, axes))

    def backward(self, grad, x):
        inverse = np.argsort(self.params["axes"])
        return (np.transpose(grad, inverse),)


class SortIndices(Function):
    """Stable ascending argsort along the last axis, as float indices."""

    name = "sort_indices"
    differentiable = False

    def forward(self, x):
        return np.argsort(x, axis=-1, kind="stable").astype(np.float64)


# wrappers ------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def add_scalar(x: Tensor, value: float) -> Tensor:
    return AddScalar.apply(x, value=value)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def log(x: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    return Log.apply(x, floor=floor)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Abs.apply(x)


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Mean.apply(x, axis=axis)


def global_average_pool(x: Tensor) -> Tensor:
    return GlobalAveragePool.apply(x)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    return L2Normalize.apply(x, axis=axis)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return Dot.apply(a, b)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if bias is None:
        return Linear.apply(x, weight)
    return Linear.apply(x, weight, bias)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*inputs, stride=stride, padding=padding)


def channel_mask_scale(x: Tensor, gate: np.ndarray) -> Tensor:
    return ChannelMaskScale.apply(x, gate=gate)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def sort_indices(x: Tensor) -> Tensor:
    return SortIndices.apply(x)


OPS: Dict[str, type] = {
    function.name: function
    for function in (
        Add,
        Sub,
        Mul,
        AddScalar,
        Scale,
        Relu,
        Sigmoid,
        Log,
        Abs,
        ChannelMaskScale,
        Sum,
        Mean,
        GlobalAveragePool,
        L2Normalize,
        Dot,
        Linear,
        MatMul,
        Conv2d,
        Reshape,
        Transpose,
        SortIndices,
    )
}


def forward(op: str, *inputs: Tensor, **params: Any) -> Tensor:
    """Apply the op registered under ``op`` to ``inputs``."""

    try:
        function = OPS[op]
    except KeyError as exc:
        raise ShapeError(f"unknown op '{op}'; expected one of {sorted(OPS)}") from exc
    return function.apply(*inputs, **params)


__all__ = [
    "LOG_FLOOR",
    "OPS",
    "abs",
    "add",
    "add_scalar",
    "channel_mask_scale",
    "conv2d",
    "dot",
    "forward",
    "global_average_pool",
    "l2_normalize",
    "linear",
    "log",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "sort_indices",
    "sub",
    "sum",
    "transpose",
]
