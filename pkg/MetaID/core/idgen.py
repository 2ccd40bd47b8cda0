# core/idgen.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .cluster import ClusterModel
from .errors import DataError, UnknownIdError
from .ingest import DatasetIndex
from .utils_io import read_matrix_binary, write_json, write_matrix_binary

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
TokenSeq = Tuple[str, ...]

STRATEGIES = ("META", "RID", "SID")
USER_PREFIX = "<User>"
ITEM_PREFIX = "<Item>"
DEFAULT_ALPHA = 0.1


class EntityRef(NamedTuple):
    kind: str   # "user" or "item"
    index: int


@dataclass(frozen=True)
class OovToken:
    surface: str
    vocab_index: int
    kind: str   # "prefix", "coarse" or "fine"


def coarse_surface(cluster: int) -> str:
    """Cluster ids are 0-based internally; tokens count from 1."""
    return f"<CT_{cluster + 1}>"


def fine_surface(rank: int) -> str:
    return f"<y_{rank}>"


@dataclass
class IdAssignment:
    strategy: str
    user_ids: List[TokenSeq]
    item_ids: List[TokenSeq]
    reverse: Dict[TokenSeq, EntityRef] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise DataError(f"Unknown ID strategy '{self.strategy}'.")
        self.user_ids = [tuple(t) for t in self.user_ids]
        self.item_ids = [tuple(t) for t in self.item_ids]
        self.reverse = {}
        for kind, seqs in (("user", self.user_ids), ("item", self.item_ids)):
            for idx, seq in enumerate(seqs):
                if seq in self.reverse:
                    other = self.reverse[seq]
                    raise DataError(
                        f"ID {' '.join(seq)} is shared by {other.kind} {other.index} and {kind} {idx}."
                    )
                self.reverse[seq] = EntityRef(kind, idx)

    def encode(self, kind: str, index: int) -> TokenSeq:
        seqs = self.user_ids if kind == "user" else self.item_ids if kind == "item" else None
        if seqs is None or not 0 <= index < len(seqs):
            raise UnknownIdError(f"No {kind} with index {index} in this assignment.")
        return seqs[index]

    def surface(self, kind: str, index: int) -> str:
        """Tokens joined with single spaces, as they appear in prompts."""
        return " ".join(self.encode(kind, index))

    def token_surfaces(self) -> List[str]:
        """Every distinct token used by any ID, in first-use order."""
        seen: Dict[str, None] = {}
        for seq in self.user_ids + self.item_ids:
            for tok in seq:
                seen.setdefault(tok, None)
        return list(seen)

    def to_id_map(self, index: DatasetIndex) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "users": {index.user_names[u]: list(seq) for u, seq in enumerate(self.user_ids)},
            "items": {index.item_names[i]: list(seq) for i, seq in enumerate(self.item_ids)},
        }

    @classmethod
    def from_id_map(cls, payload: Dict[str, Any], index: DatasetIndex) -> "IdAssignment":
        users = payload["users"]
        items = payload["items"]
        return cls(
            strategy=payload["strategy"],
            user_ids=[tuple(users[name]) for name in index.user_names],
            item_ids=[tuple(items[name]) for name in index.item_names],
        )


@dataclass
class Vocabulary:
    tokens: List[OovToken]
    f_init: Optional[np.ndarray] = None
    alpha: float = DEFAULT_ALPHA

    def __len__(self) -> int:
        return len(self.tokens)

    def by_kind(self, kind: str) -> List[OovToken]:
        return [t for t in self.tokens if t.kind == kind]


# ========================
# META ID
# ========================

def assign_meta_ids(model: ClusterModel, index: DatasetIndex) -> Tuple[IdAssignment, Vocabulary]:
    """
    Entity in cluster g at fine rank y -> (<User>|<Item>, <CT_g>, <y_y>).
    Users are entities 0..m-1 and items m..m+n-1 of the joint clustering.
    """
    m, n = index.user_count, index.item_count
    if model.entity_count != m + n:
        raise DataError(
            f"Cluster model covers {model.entity_count} entities, index has {m} users + {n} items."
        )

    def seq(prefix: str, e: int) -> TokenSeq:
        return (prefix, coarse_surface(int(model.assignment[e])), fine_surface(int(model.fine_rank[e])))

    assignment = IdAssignment(
        strategy="META",
        user_ids=[seq(USER_PREFIX, u) for u in range(m)],
        item_ids=[seq(ITEM_PREFIX, m + i) for i in range(n)],
    )

    surfaces = [(USER_PREFIX, "prefix"), (ITEM_PREFIX, "prefix")]
    surfaces += [(coarse_surface(g), "coarse") for g in range(model.groups)]
    surfaces += [(fine_surface(y), "fine") for y in range(1, int(model.cluster_sizes.max()) + 1)]
    vocab = Vocabulary([OovToken(s, k, kind) for k, (s, kind) in enumerate(surfaces)])
    logger.info("META ID vocabulary: %d OOV tokens", len(vocab))
    return assignment, vocab


def vocabulary_size_report(vocab: Optional[Vocabulary]) -> Dict[str, int]:
    """OOV token accounting; in-vocabulary strategies (RID, SID) pass None."""
    if vocab is None:
        return {"prefix": 0, "coarse": 0, "fine": 0, "total": 0, "total_without_prefix": 0}
    counts = {kind: len(vocab.by_kind(kind)) for kind in ("prefix", "coarse", "fine")}
    counts["total"] = len(vocab)
    counts["total_without_prefix"] = len(vocab) - counts["prefix"]
    return counts


def build_f_init(
    model: ClusterModel,
    vocab: Vocabulary,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
) -> Vocabulary:
    """
    Initialisation matrix for the OOV rows: <CT_g> -> alpha * mu_g, every
    other token uniform in [-alpha/d, alpha/d].
    """
    coarse = vocab.by_kind("coarse")
    if len(coarse) != model.groups:
        raise DataError(
            f"Vocabulary has {len(coarse)} coarse tokens but the model has {model.groups} clusters."
        )
    d = model.centroids.shape[1]
    if d < 1:
        raise DataError("Cluster centroids have zero dimensions.")

    rng = np.random.default_rng(seed)
    bound = alpha / d
    f_init = rng.uniform(-bound, bound, size=(len(vocab), d)) if bound > 0 else np.zeros((len(vocab), d))
    for g, tok in enumerate(coarse):
        f_init[tok.vocab_index] = alpha * model.centroids[g]
    if not np.all(np.isfinite(f_init)):
        raise DataError("f_init contains non-finite values.")
    return replace(vocab, f_init=f_init, alpha=alpha)


# ========================
# In-vocabulary baselines
# ========================

def digit_pair_tokens(number: int) -> List[str]:
    """2024 -> ["20", "24"]; 123 -> ["1", "23"]; 7 -> ["7"]."""
    text = str(int(number))
    head = len(text) % 2
    tokens = [text[:head]] if head else []
    tokens += [text[k:k + 2] for k in range(head, len(text), 2)]
    return tokens


def assign_rid(index: DatasetIndex, seed: int = 0) -> IdAssignment:
    """Random IDs: distinct integers in [0, 10*(m+n)) split into digit pairs."""
    m, n = index.user_count, index.item_count
    rng = np.random.default_rng(seed)
    numbers = rng.choice(10 * (m + n), size=m + n, replace=False)
    return IdAssignment(
        strategy="RID",
        user_ids=[("user", *digit_pair_tokens(numbers[u])) for u in range(m)],
        item_ids=[("item", *digit_pair_tokens(numbers[m + i])) for i in range(n)],
    )


def assign_sid(index: DatasetIndex) -> IdAssignment:
    """
    Sequential IDs: items get consecutive integers (from 1) in the order users
    first touch them, walking users in index order; users get 1..m.
    """
    item_number: Dict[int, int] = {}
    for seq in index.user_sequences:
        for k in seq:
            item_number.setdefault(int(index.items[k]), len(item_number) + 1)
    return IdAssignment(
        strategy="SID",
        user_ids=[("user", *digit_pair_tokens(u + 1)) for u in range(index.user_count)],
        item_ids=[("item", *digit_pair_tokens(item_number[i])) for i in range(index.item_count)],
    )


def decode_id(assignment: IdAssignment, tokens: Sequence[str]) -> EntityRef:
    key = tuple(tokens)
    ref = assignment.reverse.get(key)
    if ref is None:
        raise UnknownIdError(f"No entity has ID {' '.join(key)!r}.")
    return ref


# ========================
# Artifacts
# ========================

def write_vocabulary(vocab: Vocabulary, path: PathLike) -> None:
    """Line-delimited "surface<TAB>kind<TAB>index"."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(f"{tok.surface}\t{tok.kind}\t{tok.vocab_index}\n")


def read_vocabulary(path: PathLike, f_init_path: Optional[PathLike] = None) -> Vocabulary:
    tokens = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                surface, kind, idx = line.rstrip("\n").split("\t")
                tokens.append(OovToken(surface, int(idx), kind))
    vocab = Vocabulary(tokens)
    if f_init_path is not None:
        matrix, _ = read_matrix_binary(f_init_path)
        vocab = replace(vocab, f_init=matrix)
    return vocab


def write_f_init(vocab: Vocabulary, path: PathLike) -> None:
    if vocab.f_init is None:
        raise DataError("Vocabulary has no f_init matrix; run build_f_init first.")
    write_matrix_binary(path, vocab.f_init, (len(vocab), 0, vocab.f_init.shape[1]))


def write_id_map(assignment: IdAssignment, index: DatasetIndex, path: PathLike) -> None:
    write_json(path, assignment.to_id_map(index))
