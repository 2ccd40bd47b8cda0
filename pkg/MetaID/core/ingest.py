# core/ingest.py
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError, ParseError, RecordError, SplitError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RATING_LEVELS = (1, 2, 3, 4, 5)
TEXT_FIELDS = ("review_text", "summary", "explanation", "feature_word")
REQUIRED_FIELDS = ("user", "item", "rating", "timestamp")

# JSON-lines keys -> record fields
JSONL_KEYS = {
    "user": "user_key",
    "item": "item_key",
    "rating": "rating",
    "timestamp": "timestamp",
    "review": "review_text",
    "summary": "summary",
    "explanation": "explanation",
    "feature": "feature_word",
}


@dataclass(frozen=True)
class InteractionRecord:
    user_key: str
    item_key: str
    rating: int
    timestamp: int
    review_text: Optional[str] = None
    summary: Optional[str] = None
    explanation: Optional[str] = None
    feature_word: Optional[str] = None


@dataclass(frozen=True)
class InteractionFormat:
    """
    How to read a raw interaction file.

    `columns` names each delimited column in order; use None for columns to
    ignore. Names: user, item, rating, timestamp, review, summary,
    explanation, feature.
    """
    kind: str = "delimited"  # "delimited" or "jsonl"
    delimiter: str = "\t"
    columns: Tuple[Optional[str], ...] = REQUIRED_FIELDS
    skip_header: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("delimited", "jsonl"):
            raise ConfigError(f"Unknown input kind '{self.kind}'.")
        if self.kind == "delimited":
            named = [c for c in self.columns if c is not None]
            missing = [c for c in REQUIRED_FIELDS if c not in named]
            if missing:
                raise ConfigError(f"Column mapping lacks required fields: {missing}.")
            unknown = [c for c in named if c not in JSONL_KEYS]
            if unknown:
                raise ConfigError(f"Unknown column names: {unknown}.")
            if len(set(named)) != len(named):
                raise ConfigError("Column mapping names a field twice.")
            if not self.delimiter:
                raise ConfigError("Delimiter must be non-empty.")


# ========================
# Parsing
# ========================

def _parse_rating(raw: Any, line_no: int) -> int:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise RecordError(f"rating {raw!r} is not a number", line_no) from None
    if not value.is_integer() or int(value) not in RATING_LEVELS:
        raise RecordError(f"rating {raw!r} is outside the integer range 1..5", line_no)
    return int(value)


def _parse_timestamp(raw: Any, line_no: int) -> int:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise RecordError(f"timestamp {raw!r} is not a number", line_no) from None
    if not value.is_integer():
        raise RecordError(f"timestamp {raw!r} is not whole seconds", line_no)
    return int(value)


def _make_record(fields: Dict[str, Any], line_no: int) -> InteractionRecord:
    user = str(fields.get("user_key") or "").strip()
    item = str(fields.get("item_key") or "").strip()
    if not user or not item:
        raise RecordError("empty user or item key", line_no)
    texts = {}
    for name in TEXT_FIELDS:
        value = fields.get(name)
        texts[name] = None if value in (None, "") else str(value)
    return InteractionRecord(
        user_key=user,
        item_key=item,
        rating=_parse_rating(fields.get("rating"), line_no),
        timestamp=_parse_timestamp(fields.get("timestamp"), line_no),
        **texts,
    )


def _iter_lines(source: Union[io.IOBase, Iterable[Union[bytes, str]]]) -> Iterable[Tuple[int, str]]:
    for line_no, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise ParseError("invalid UTF-8", line_no) from None
        yield line_no, raw.rstrip("\r\n")


def parse_interactions(
    source: Union[io.IOBase, Iterable[Union[bytes, str]]],
    fmt: InteractionFormat = InteractionFormat(),
) -> List[InteractionRecord]:
    """
    Parse a line-delimited byte (or text) stream into records, input order
    preserved. Blank lines are skipped; line numbers are 1-based.
    """
    records: List[InteractionRecord] = []
    for line_no, line in _iter_lines(source):
        if fmt.skip_header and line_no == 1:
            continue
        if not line.strip():
            continue

        if fmt.kind == "jsonl":
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", line_no) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line_no)
            missing = [k for k in REQUIRED_FIELDS if k not in obj]
            if missing:
                raise ParseError(f"missing keys {missing}", line_no)
            fields = {JSONL_KEYS[k]: v for k, v in obj.items() if k in JSONL_KEYS}
        else:
            parts = line.split(fmt.delimiter)
            if len(parts) != len(fmt.columns):
                raise ParseError(
                    f"expected {len(fmt.columns)} columns, found {len(parts)}", line_no
                )
            fields = {
                JSONL_KEYS[name]: value
                for name, value in zip(fmt.columns, parts)
                if name is not None
            }

        records.append(_make_record(fields, line_no))

    logger.info("Parsed %d interaction records", len(records))
    return records


# ========================
# Index
# ========================

@dataclass
class DatasetIndex:
    """
    Contiguous user/item indices over a multiset of interactions.

    Interaction `k` is (users[k], items[k], ratings[k], timestamps[k]);
    `user_sequences[u]` lists u's interaction ids in chronological order.
    """
    user_names: List[str]
    item_names: List[str]
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    user_sequences: List[np.ndarray]
    texts: List[Dict[str, str]] = field(default_factory=list)

    @property
    def user_count(self) -> int:
        return len(self.user_names)

    @property
    def item_count(self) -> int:
        return len(self.item_names)

    @property
    def interaction_count(self) -> int:
        return int(self.users.size)

    def sequence(self, user: int) -> List[Tuple[int, int, int]]:
        """(item_idx, rating, timestamp) for `user`, ascending timestamp."""
        ids = self.user_sequences[user]
        return [
            (int(self.items[k]), int(self.ratings[k]), int(self.timestamps[k]))
            for k in ids
        ]

    def text(self, k: int, name: str) -> Optional[str]:
        if not self.texts:
            return None
        return self.texts[k].get(name)

    def to_records(self) -> List[InteractionRecord]:
        out = []
        for k in range(self.interaction_count):
            extra = self.texts[k] if self.texts else {}
            out.append(
                InteractionRecord(
                    user_key=self.user_names[self.users[k]],
                    item_key=self.item_names[self.items[k]],
                    rating=int(self.ratings[k]),
                    timestamp=int(self.timestamps[k]),
                    **extra,
                )
            )
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "user_names": list(self.user_names),
            "item_names": list(self.item_names),
            "interactions": [
                [int(u), int(i), int(r), int(t)]
                for u, i, r, t in zip(self.users, self.items, self.ratings, self.timestamps)
            ],
            "texts": self.texts,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DatasetIndex":
        rows = np.asarray(payload["interactions"], dtype=np.int64).reshape(-1, 4)
        return _assemble(
            list(payload["user_names"]),
            list(payload["item_names"]),
            rows,
            list(payload.get("texts") or []),
        )


def _assemble(
    user_names: List[str],
    item_names: List[str],
    rows: np.ndarray,
    texts: List[Dict[str, str]],
) -> DatasetIndex:
    users = rows[:, 0].copy()
    items = rows[:, 1].copy()
    ratings = rows[:, 2].copy()
    timestamps = rows[:, 3].copy()

    # stable sort by (user, timestamp) keeps input order for ties
    order = np.lexsort((np.arange(users.size), timestamps, users))
    counts = np.bincount(users, minlength=len(user_names))
    bounds = np.concatenate([[0], np.cumsum(counts)])
    sequences = [order[bounds[u]:bounds[u + 1]] for u in range(len(user_names))]

    return DatasetIndex(
        user_names=user_names,
        item_names=item_names,
        users=users,
        items=items,
        ratings=ratings,
        timestamps=timestamps,
        user_sequences=sequences,
        texts=texts,
    )


def build_index(records: Sequence[InteractionRecord]) -> DatasetIndex:
    """
    Assign indices in first-seen order. Duplicate interactions are kept.
    """
    if not records:
        raise DataError("Cannot build an index from zero records.")

    user_ids: Dict[str, int] = {}
    item_ids: Dict[str, int] = {}
    rows = np.empty((len(records), 4), dtype=np.int64)
    texts: List[Dict[str, str]] = []
    has_text = False

    for k, rec in enumerate(records):
        u = user_ids.setdefault(rec.user_key, len(user_ids))
        i = item_ids.setdefault(rec.item_key, len(item_ids))
        rows[k] = (u, i, rec.rating, rec.timestamp)
        extra = {name: getattr(rec, name) for name in TEXT_FIELDS if getattr(rec, name)}
        has_text = has_text or bool(extra)
        texts.append(extra)

    index = _assemble(list(user_ids), list(item_ids), rows, texts if has_text else [])
    logger.info(
        "Indexed %d users, %d items, %d interactions",
        index.user_count, index.item_count, index.interaction_count,
    )
    return index


# ========================
# Splits
# ========================

@dataclass
class DatasetSplits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    split_kind: str
    dropped_users: int = 0

    def split_of(self) -> Dict[int, str]:
        """Interaction id -> split name."""
        lookup: Dict[int, str] = {}
        for name, ids in (("train", self.train), ("validation", self.validation), ("test", self.test)):
            for k in ids:
                lookup[int(k)] = name
        return lookup

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split_kind": self.split_kind,
            "dropped_users": self.dropped_users,
            "train": self.train.tolist(),
            "validation": self.validation.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DatasetSplits":
        return cls(
            train=np.asarray(payload["train"], dtype=np.int64),
            validation=np.asarray(payload["validation"], dtype=np.int64),
            test=np.asarray(payload["test"], dtype=np.int64),
            split_kind=payload["split_kind"],
            dropped_users=int(payload.get("dropped_users", 0)),
        )


def split_leave_one_out(index: DatasetIndex) -> DatasetSplits:
    """
    Per user: last interaction -> test, second-to-last -> validation,
    the rest -> train. Users with fewer than 3 interactions are dropped.
    """
    train: List[int] = []
    val: List[int] = []
    test: List[int] = []
    dropped = 0
    for seq in index.user_sequences:
        if seq.size < 3:
            dropped += 1
            continue
        train.extend(seq[:-2].tolist())
        val.append(int(seq[-2]))
        test.append(int(seq[-1]))

    if not test:
        raise SplitError("No user has at least 3 interactions; leave-one-out is impossible.")
    if dropped:
        logger.warning("Leave-one-out dropped %d users with fewer than 3 interactions", dropped)

    return DatasetSplits(
        train=np.sort(np.asarray(train, dtype=np.int64)),
        validation=np.sort(np.asarray(val, dtype=np.int64)),
        test=np.sort(np.asarray(test, dtype=np.int64)),
        split_kind="leave-one-out",
        dropped_users=dropped,
    )


def _split_sizes(total: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    n_train = int(np.floor(total * ratios[0] + 1e-9))
    n_val = int(np.floor(total * ratios[1] + 1e-9))
    return n_train, n_val, total - n_train - n_val


def split_random(
    index: DatasetIndex,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplits:
    """
    Seeded shuffle, assignment by ratio, then coverage repair so every user
    and item keeps at least one training interaction.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"Split ratios must be three non-negative values summing to 1, got {ratios}.")

    total = index.interaction_count
    rng = np.random.default_rng(seed)
    perm = rng.permutation(total)
    n_train, n_val, _ = _split_sizes(total, ratios)

    # 0 = train, 1 = validation, 2 = test
    assign = np.empty(total, dtype=np.int8)
    assign[perm[:n_train]] = 0
    assign[perm[n_train:n_train + n_val]] = 1
    assign[perm[n_train + n_val:]] = 2

    forced = _repair_coverage(index, assign, perm)
    if forced and not np.any(assign != 0):
        raise SplitError(
            "Dataset too small to keep held-out data while covering every entity in train; "
            f"uncovered entities: {forced}."
        )

    logger.info(
        "Random split: train=%d validation=%d test=%d",
        int(np.sum(assign == 0)), int(np.sum(assign == 1)), int(np.sum(assign == 2)),
    )
    return DatasetSplits(
        train=np.flatnonzero(assign == 0),
        validation=np.flatnonzero(assign == 1),
        test=np.flatnonzero(assign == 2),
        split_kind="random-80-10-10",
    )


def _repair_coverage(index: DatasetIndex, assign: np.ndarray, perm: np.ndarray) -> List[str]:
    """
    Swap held-out interactions into train for uncovered users/items. The
    train interaction given back must not uncover anything; when no such
    partner exists the interaction is moved instead. Returns the entities
    that needed a plain move.
    """
    users, items = index.users, index.items
    user_train = np.bincount(users[assign == 0], minlength=index.user_count)
    item_train = np.bincount(items[assign == 0], minlength=index.item_count)
    position = np.empty_like(perm)
    position[perm] = np.arange(perm.size)
    forced: List[str] = []

    # visit held-out interactions in shuffled order for determinism under seed
    for k in perm:
        if assign[k] == 0:
            continue
        u, i = users[k], items[k]
        if user_train[u] > 0 and item_train[i] > 0:
            continue

        slot = assign[k]
        assign[k] = 0
        user_train[u] += 1
        item_train[i] += 1

        # partner must leave its user and item with a training interaction
        spare = (assign == 0) & (user_train[users] > 1) & (item_train[items] > 1)
        spare[k] = False
        candidates = np.flatnonzero(spare)
        partner = int(candidates[np.argmin(position[candidates])]) if candidates.size else -1

        if partner >= 0:
            assign[partner] = slot
            user_train[users[partner]] -= 1
            item_train[items[partner]] -= 1
        else:
            forced.append(f"user:{index.user_names[u]}/item:{index.item_names[i]}")

    return forced


# ========================
# Statistics
# ========================

@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    reviews: int
    sparsity_percent: float


def compute_stats(index: DatasetIndex) -> DatasetStats:
    m, n, total = index.user_count, index.item_count, index.interaction_count
    return DatasetStats(
        users=m,
        items=n,
        reviews=total,
        sparsity_percent=100.0 * total / (m * n),
    )


def format_stats(stats: DatasetStats) -> str:
    """Fixed-order key: value report, sparsity to 4 decimals."""
    return (
        f"users: {stats.users}\n"
        f"items: {stats.items}\n"
        f"reviews: {stats.reviews}\n"
        f"sparsity_percent: {stats.sparsity_percent:.4f}\n"
    )


# ========================
# Synthetic data
# ========================

def generate_synthetic(
    blocks: int,
    users_per_block: int,
    items_per_block: int,
    cross_block_noise: float = 0.0,
    seed: int = 0,
) -> List[InteractionRecord]:
    """
    Block-structured ratings: users of block b rate every item of block b
    with 5 and, with probability `cross_block_noise`, items of other blocks
    with 1. Keys are "u{k}" / "i{k}"; block of entity k is k // per_block.
    """
    if blocks < 1:
        raise DataError("blocks must be >= 1.")
    if users_per_block < 1 or items_per_block < 1:
        raise DataError("Synthetic data needs at least one user and one item per block.")
    if not 0.0 <= cross_block_noise < 1.0:
        raise DataError(f"cross_block_noise must be in [0, 1), got {cross_block_noise}.")

    rng = np.random.default_rng(seed)
    n_items = blocks * items_per_block
    item_block = np.arange(n_items) // items_per_block
    records: List[InteractionRecord] = []
    ts = 0
    for u in range(blocks * users_per_block):
        b = u // users_per_block
        draws = rng.random(n_items)
        for i in range(n_items):
            if item_block[i] == b:
                rating = 5
            elif draws[i] < cross_block_noise:
                rating = 1
            else:
                continue
            records.append(InteractionRecord(f"u{u}", f"i{i}", rating, ts))
            ts += 1
    return records


def write_interactions(records: Sequence[InteractionRecord], path: PathLike) -> None:
    """Tab-separated user, item, rating, timestamp; readable with the default format."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.user_key}\t{rec.item_key}\t{rec.rating}\t{rec.timestamp}\n")
