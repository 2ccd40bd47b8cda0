# conftest.py
from __future__ import annotations

from pathlib import Path
from typing import List

import pytest

from core.ingest import DatasetIndex, InteractionRecord, build_index, generate_synthetic, write_interactions

# u1:(i1=5, i2=1), u2:(i1=1, i2=5), u3:(i2=4, i3=2); timestamps in listing order
TINY_ROWS = [
    ("u1", "i1", 5),
    ("u1", "i2", 1),
    ("u2", "i1", 1),
    ("u2", "i2", 5),
    ("u3", "i2", 4),
    ("u3", "i3", 2),
]


@pytest.fixture
def tiny_records() -> List[InteractionRecord]:
    return [InteractionRecord(u, i, r, t) for t, (u, i, r) in enumerate(TINY_ROWS, start=1)]


@pytest.fixture
def tiny_index(tiny_records) -> DatasetIndex:
    return build_index(tiny_records)


@pytest.fixture
def tiny_file(tmp_path, tiny_records) -> Path:
    path = tmp_path / "tiny.tsv"
    write_interactions(tiny_records, path)
    return path


@pytest.fixture
def block_index() -> DatasetIndex:
    """Two blocks of 10 users x 10 items, 5% cross-block noise."""
    return build_index(generate_synthetic(2, 10, 10, 0.05, seed=3))
