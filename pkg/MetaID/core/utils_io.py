# core/utils_io.py
from __future__ import annotations

import hashlib
import json
import os
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Tuple, Union

import numpy as np

PathLike = Union[str, Path]

JSONL_EXTENSIONS = {".jsonl", ".ndjson"}

MATRIX_MAGIC = b"MPEB"
# magic, then three little-endian uint64 counts
MATRIX_HEADER = struct.Struct("<4sQQQ")


def is_jsonl_file(path: PathLike) -> bool:
    return Path(path).suffix.lower() in JSONL_EXTENSIONS


def ensure_dir(path: PathLike) -> None:
    """
    Create directory if it does not exist.
    """
    os.makedirs(path, exist_ok=True)


def file_digest(path: PathLike) -> str:
    """SHA-256 of a file's bytes, hex encoded."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit child seed for a named stage or trial."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@contextmanager
def partial_output(path: PathLike) -> Iterator[Path]:
    """
    Yield `<path>.partial` for writing; rename to `path` only on success.
    On failure the `.partial` file is left behind for inspection.
    """
    path = Path(path)
    ensure_dir(path.parent)
    tmp = path.with_name(path.name + ".partial")
    yield tmp
    os.replace(tmp, path)


def write_json(path: PathLike, payload: Any) -> None:
    # sort_keys + fixed separators keep digests stable across runs
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        fh.write("\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ========================
# Dense matrix codec ("MPEB")
# ========================

def write_matrix_binary(path: PathLike, matrix: np.ndarray, counts: Tuple[int, int, int]) -> None:
    """
    Write a row-major float32 matrix: magic "MPEB", three uint64 counts, data.
    For embeddings the counts are (m, n, d); for f_init (tokens, 0, d).
    """
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    rows = counts[0] + counts[1]
    if matrix.shape != (rows, counts[2]):
        raise ValueError(
            f"Matrix shape {matrix.shape} does not match header counts {counts}."
        )
    with open(path, "wb") as fh:
        fh.write(MATRIX_HEADER.pack(MATRIX_MAGIC, *counts))
        fh.write(matrix.tobytes(order="C"))


def read_matrix_binary(path: PathLike) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    with open(path, "rb") as fh:
        header = fh.read(MATRIX_HEADER.size)
        if len(header) < MATRIX_HEADER.size:
            raise ValueError(f"{path}: truncated header.")
        magic, a, b, d = MATRIX_HEADER.unpack(header)
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}.")
        data = np.frombuffer(fh.read(), dtype="<f4")
    rows = a + b
    if data.size != rows * d:
        raise ValueError(f"{path}: expected {rows * d} floats, found {data.size}.")
    return data.reshape(rows, d).astype(np.float64), (a, b, d)


def write_matrix_text(path: PathLike, matrix: np.ndarray, m: int, n: int) -> None:
    """Header line "m n d" then one space-separated row per node."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{m} {n} {matrix.shape[1]}\n")
        np.savetxt(fh, matrix, fmt="%.9g", delimiter=" ")


def read_matrix_text(path: PathLike) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        m, n, d = (int(x) for x in fh.readline().split())
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (m + n, d):
        raise ValueError(f"{path}: expected {(m + n, d)} values, found {data.shape}.")
    return data, (m, n, d)
