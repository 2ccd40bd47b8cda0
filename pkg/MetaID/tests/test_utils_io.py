from __future__ import annotations

import numpy as np
import pytest

from core.utils_io import (
    derive_seed,
    file_digest,
    partial_output,
    read_matrix_binary,
    text_digest,
    write_json,
    write_matrix_binary,
)


def test_partial_output_renames_on_success(tmp_path):
    target = tmp_path / "out" / "a.json"
    with partial_output(target) as tmp:
        assert tmp.name == "a.json.partial"
        write_json(tmp, {"b": 1, "a": 2})
    assert target.read_text(encoding="utf-8") == '{"a":2,"b":1}\n'
    assert not (tmp_path / "out" / "a.json.partial").exists()


def test_partial_output_left_behind_on_failure(tmp_path):
    target = tmp_path / "a.json"
    with pytest.raises(RuntimeError):
        with partial_output(target) as tmp:
            tmp.write_text("half", encoding="utf-8")
            raise RuntimeError("disk full")
    assert not target.exists()
    assert (tmp_path / "a.json.partial").read_text(encoding="utf-8") == "half"


def test_derive_seed_is_stable_and_stage_specific():
    assert derive_seed(0, "walk") == derive_seed(0, "walk")
    assert derive_seed(0, "walk") != derive_seed(0, "embed")
    assert derive_seed(1, "walk") != derive_seed(0, "walk")
    assert 0 <= derive_seed(123, "x") < 2 ** 63


def test_digests(tmp_path):
    path = tmp_path / "f.txt"
    path.write_bytes(b"abc")
    assert file_digest(path) == text_digest("abc")
    assert text_digest("abc").startswith("ba7816bf")


def test_matrix_codec_rejects_bad_files(tmp_path):
    with pytest.raises(ValueError):
        write_matrix_binary(tmp_path / "m.bin", np.zeros((2, 3)), (1, 0, 3))
    (tmp_path / "short.bin").write_bytes(b"MPEB")
    with pytest.raises(ValueError, match="truncated"):
        read_matrix_binary(tmp_path / "short.bin")
    write_matrix_binary(tmp_path / "m.bin", np.ones((2, 3)), (2, 0, 3))
    raw = bytearray((tmp_path / "m.bin").read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "bad.bin").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        read_matrix_binary(tmp_path / "bad.bin")
