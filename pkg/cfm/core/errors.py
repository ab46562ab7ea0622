"""Exception hierarchy shared by the lab.

Every concrete error also derives from :class:`ValueError` so callers that
guard bad input with ``except ValueError`` keep working.
"""

from __future__ import annotations


class CfmError(Exception):
    """Base class for all lab errors."""


class ShapeError(CfmError, ValueError):
    """Tensor operands have incompatible shapes or ranks."""


class GradientError(CfmError, ValueError):
    """Backward pass or optimizer step invoked on an invalid graph."""


class DatasetError(CfmError, ValueError):
    """Malformed dataset files, manifests, or missing videos."""


class AugmentError(CfmError, ValueError):
    """Augmentation or perturbation parameters out of range."""


class ConfigError(CfmError, ValueError):
    """Configuration file or override could not be applied."""


class CheckpointError(CfmError, ValueError):
    """Checkpoint directory is corrupt or incompatible."""


class ProtocolError(CfmError, ValueError):
    """Evaluation protocol cannot be applied to the given checkpoint."""


class MetricsError(CfmError, ValueError):
    """Metric undefined for the given scores (one class only, mixed video labels)."""


class TrainingError(CfmError, RuntimeError):
    """Training produced a non-finite loss or another fatal condition."""

    def __init__(self, message: str, *, iteration: int | None = None, epoch: int | None = None):
        context = []
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if iteration is not None:
            context.append(f"iteration={iteration}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.iteration = iteration
        self.epoch = epoch


__all__ = [
    "AugmentError",
    "CfmError",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "GradientError",
    "MetricsError",
    "ProtocolError",
    "ShapeError",
    "TrainingError",
]
