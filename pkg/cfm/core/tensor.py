"""Dense float64 tensors and the reverse-mode tape.

A :class:`Tensor` wraps a contiguous row-major ``float64`` array.  Operations
are :class:`Function` subclasses (see :mod:`cfm.core.ops`); when any input
requires a gradient and recording is enabled, :meth:`Function.apply` appends a
:class:`TapeEntry` to the process-wide :class:`Tape`.  :func:`backward` walks
the tape in reverse, accumulates gradients into the leaves and clears it.
"""

from __future__ import annotations

import itertools
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

_node_ids = itertools.count()


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data: Any, *, requires_grad: bool = False) -> None:
        self.data: np.ndarray = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Function:
    """Base class for taped operations.

    Subclasses implement :meth:`forward` on raw arrays and :meth:`backward`,
    which receives the gradient of the output and returns one gradient (or
    ``None``) per input.  Keyword parameters passed to :meth:`apply` are kept
    on ``self.params``; intermediate arrays needed by the backward rule go in
    ``self.saved``.
    """

    name = "function"
    differentiable = True

    def __init__(self, **params: Any) -> None:
        self.params = params
        self.saved: Dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward rule")

    def backward(self, grad: np.ndarray, *arrays: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward rule")

    @classmethod
    def apply(cls, *inputs: Tensor, **params: Any) -> Tensor:
        function = cls(**params)
        output = function.forward(*(tensor.data for tensor in inputs))
        if not np.all(np.isfinite(output)) and all(np.all(np.isfinite(t.data)) for t in inputs):
            logger.warning("%s produced non-finite values from finite inputs", cls.name)
        tape = get_tape()
        requires_grad = (
            cls.differentiable
            and tape.recording
            and any(tensor.requires_grad for tensor in inputs)
        )
        result = Tensor(output, requires_grad=requires_grad)
        if requires_grad:
            tape.record(function, inputs, result)
        return result


@dataclass
class TapeEntry:
    """One recorded operation: the function, its inputs and its output."""

    function: Function
    inputs: Tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Ordered record of operations; inputs always precede their outputs."""

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self.recording = True

    def record(self, function: Function, inputs: Sequence[Tensor], output: Tensor) -> None:
        self.entries.append(TapeEntry(function=function, inputs=tuple(inputs), output=output))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE = Tape()


def get_tape() -> Tape:
    return _TAPE


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed block without recording onto the tape."""

    tape = get_tape()
    previous = tape.recording
    tape.recording = False
    try:
        yield
    finally:
        tape.recording = previous


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every taped leaf.

    The tape is cleared afterwards, also when the pass fails.
    """

    tape = get_tape()
    try:
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise GradientError("loss was not produced through the tape")

        produced = {entry.output.node_id for entry in tape.entries}
        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}

        for entry in reversed(tape.entries):
            upstream = grads.pop(entry.output.node_id, None)
            if upstream is None:
                continue
            input_grads = entry.function.backward(upstream, *(t.data for t in entry.inputs))
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.data.shape:
                    raise ShapeError(
                        f"{entry.function.name} backward produced gradient {grad.shape} "
                        f"for input {tensor.shape}"
                    )
                if tensor.node_id not in produced:
                    leaves[tensor.node_id] = tensor
                existing = grads.get(tensor.node_id)
                grads[tensor.node_id] = grad if existing is None else existing + grad

        for node_id, leaf in leaves.items():
            grad = grads[node_id]
            leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
    finally:
        tape.clear()


__all__ = [
    "Function",
    "Tape",
    "TapeEntry",
    "Tensor",
    "backward",
    "get_tape",
    "no_grad",
]
