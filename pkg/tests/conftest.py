from __future__ import annotations

import pathlib
import sys

import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.tensor import get_tape


@pytest.fixture(autouse=True)
def clean_tape():
    """Every test starts and ends with an empty, recording tape."""

    tape = get_tape()
    tape.clear()
    tape.recording = True
    yield tape
    tape.clear()
    tape.recording = True
