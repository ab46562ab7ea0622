"""Data, model, training and evaluation services."""

__all__ = [
    "attention",
    "augment",
    "checkpoint",
    "dataset",
    "evaluation",
    "losses",
    "metrics",
    "model",
    "perturb",
    "plc",
    "report",
    "synthgen",
    "trainer",
    "triplet",
]
