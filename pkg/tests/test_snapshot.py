from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.append(str(pathlib.Path(__file__).resolve().parents[1]))

from cfm.core.errors import CheckpointError
from cfm.core.snapshot import MAGIC, decode_snapshot, encode_snapshot, read_snapshot, write_snapshot


def test_header_layout_is_little_endian_rank_and_dims():
    payload = encode_snapshot(np.zeros((2, 3)))
    assert payload[:4] == MAGIC
    assert payload[4:8] == (2).to_bytes(4, "little")
    assert payload[8:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(payload) == 16 + 6 * 8


def test_file_round_trip_is_bit_exact(tmp_path):
    array = np.random.default_rng(0).standard_normal((3, 2, 4))
    path = tmp_path / "weights.cfmt"
    write_snapshot(path, array)
    restored = read_snapshot(path)
    assert restored.dtype == np.float64
    assert restored.tobytes() == array.tobytes()


def test_scalar_snapshot():
    assert decode_snapshot(encode_snapshot(np.array(2.5))).shape == ()


def test_bad_magic_rejected():
    with pytest.raises(CheckpointError, match="bad magic"):
        decode_snapshot(b"NOPE" + bytes(12))


def test_truncated_payload_names_source(tmp_path):
    path = tmp_path / "cut.cfmt"
    path.write_bytes(encode_snapshot(np.ones(4))[:-3])
    with pytest.raises(CheckpointError, match="cut.cfmt"):
        read_snapshot(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        read_snapshot(tmp_path / "absent.cfmt")
