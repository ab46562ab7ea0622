"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4
DEFAULT_KINK_TOL = 1e-3


@dataclass
class GradcheckResult:
    passed: bool
    max_rel_error: float
    checked: int
    skipped: int
    worst_index: Tuple[int, ...] | None = None


def _evaluate(f: Callable[[Tensor], Tensor], x: Tensor) -> float:
    with no_grad():
        return f(x).item()


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    *,
    kink_tol: float = DEFAULT_KINK_TOL,
) -> GradcheckResult:
    """Compare the tape gradient of scalar ``f`` at ``x`` against central differences.

    The relative error of each coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  Coordinates
    where the one-sided slopes disagree by more than ``kink_tol`` sit within
    ``eps`` of a kink (relu at 0, a hinge, a filter threshold) and are skipped.
    ``x.data`` is restored before returning.
    """

    leaf = Tensor(x.data.copy(), requires_grad=True)
    loss = f(leaf)
    if loss.requires_grad:
        backward(loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    point = Tensor(x.data.copy())
    centre = _evaluate(f, point)
    errors: List[float] = []
    skipped = 0
    worst_index: Tuple[int, ...] | None = None
    worst = 0.0

    for index in np.ndindex(*point.shape):
        original = point.data[index]
        point.data[index] = original + eps
        plus = _evaluate(f, point)
        point.data[index] = original - eps
        minus = _evaluate(f, point)
        point.data[index] = original

        forward_slope = (plus - centre) / eps
        backward_slope = (centre - minus) / eps
        spread = max(1.0, abs(forward_slope), abs(backward_slope))
        if abs(forward_slope - backward_slope) > kink_tol * spread:
            skipped += 1
            continue

        numeric = (plus - minus) / (2.0 * eps)
        value = float(analytic[index])
        error = abs(value - numeric) / max(1.0, abs(value), abs(numeric))
        errors.append(error)
        if error >= worst:
            worst, worst_index = error, tuple(int(i) for i in index)

    max_error = max(errors) if errors else 0.0
    passed = max_error < tol
    if not passed:
        logger.debug("gradcheck failed: max relative error %.3e at %s", max_error, worst_index)
    return GradcheckResult(
        passed=passed,
        max_rel_error=max_error,
        checked=len(errors),
        skipped=skipped,
        worst_index=worst_index,
    )


__all__ = ["DEFAULT_EPS", "DEFAULT_TOL", "GradcheckResult", "gradcheck"]
