"""Environment-driven locations for datasets and training runs."""

from __future__ import annotations

import os
from pathlib import Path

DEFAULT_DATA_DIR = "data"
DEFAULT_RUNS_DIR = "runs"


def get_data_dir() -> Path:
    """Return the directory synthetic datasets are written to by default.

    The CLI and the experiment runner share this helper so ``.env`` files and
    exported variables behave the same everywhere.
    """

    return Path(os.getenv("CFM_DATA_DIR", DEFAULT_DATA_DIR))


def get_runs_dir() -> Path:
    """Return the directory checkpoints and telemetry are written to."""

    return Path(os.getenv("CFM_RUNS_DIR", DEFAULT_RUNS_DIR))


__all__ = ["DEFAULT_DATA_DIR", "DEFAULT_RUNS_DIR", "get_data_dir", "get_runs_dir"]
