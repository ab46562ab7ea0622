"""Numeric core: tensors, tape, optimizer and shared configuration."""

__all__ = [
    "config",
    "errors",
    "gradcheck",
    "ops",
    "optim",
    "settings",
    "snapshot",
    "tensor",
]
