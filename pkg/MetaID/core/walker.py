# core/walker.py
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .errors import ConfigError, GraphError, ParseError
from .graph import InteractionGraph
from .ingest import RATING_LEVELS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class WalkConfig:
    walk_length: int = 64
    rounds_per_node: int = 32
    seed: int = 0
    ratings: Tuple[int, ...] = RATING_LEVELS

    def __post_init__(self) -> None:
        if self.walk_length < 2:
            raise ConfigError("walk_length must be >= 2.")
        if self.rounds_per_node < 1:
            raise ConfigError("rounds_per_node must be >= 1.")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative.")
        if not self.ratings or any(r not in RATING_LEVELS for r in self.ratings):
            raise ConfigError(f"ratings must be a non-empty subset of 1..5, got {self.ratings}.")


@dataclass
class WalkCorpus:
    """
    Walks over global node ids: users are 0..m-1, items m..m+n-1.
    """
    walks: List[np.ndarray]
    user_count: int
    item_count: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count

    def token(self, node: int) -> str:
        if node < self.user_count:
            return f"u{node}"
        return f"i{node - self.user_count}"

    def parse_token(self, token: str) -> int:
        kind, idx = token[:1], int(token[1:])
        if kind == "u" and 0 <= idx < self.user_count:
            return idx
        if kind == "i" and 0 <= idx < self.item_count:
            return self.user_count + idx
        raise ValueError(f"token {token!r} out of range")

    def token_count(self) -> int:
        return int(sum(w.size for w in self.walks))


def _walk_chunk(graph: InteractionGraph, config: WalkConfig, lo: int, hi: int) -> List[np.ndarray]:
    """Walks for start nodes lo..hi-1 in canonical (node, rating, round) order."""
    m = graph.user_count
    k = config.walk_length
    out: List[np.ndarray] = []
    for start in range(lo, hi):
        for r in config.ratings:
            adjs = (graph.user_adj[r], graph.item_adj[r])
            first_is_item = start >= m
            first_idx = start - m if first_is_item else start
            if adjs[first_is_item].neighbors(first_idx).size == 0:
                continue
            for rnd in range(config.rounds_per_node):
                # per-walk stream: scheduling cannot change the result
                rng = np.random.default_rng([config.seed, start, r, rnd])
                draws = rng.random(k - 1)
                walk = np.empty(k, dtype=np.int64)
                walk[0] = start
                is_item, idx = first_is_item, first_idx
                length = 1
                for step in range(k - 1):
                    nbrs = adjs[is_item].neighbors(idx)
                    if nbrs.size == 0:
                        break
                    idx = int(nbrs[int(draws[step] * nbrs.size)])
                    is_item = not is_item
                    walk[length] = idx + m if is_item else idx
                    length += 1
                if length >= 2:
                    out.append(walk[:length])
    return out


def sample_walks(graph: InteractionGraph, config: WalkConfig = WalkConfig(), workers: int = 1) -> WalkCorpus:
    """
    Meta-path walks: for every node and every rating it has edges at, run
    `rounds_per_node` uniform walks that stay on that rating level.
    """
    if graph.total_edges == 0:
        raise GraphError("Cannot sample walks from a graph with zero edges.")

    total = graph.node_count()
    workers = max(1, int(workers))
    n_chunks = min(total, workers * 4)
    bounds = np.linspace(0, total, n_chunks + 1).astype(int)

    if workers == 1:
        parts = [_walk_chunk(graph, config, bounds[c], bounds[c + 1]) for c in range(n_chunks)]
    else:
        parts = Parallel(n_jobs=workers)(
            delayed(_walk_chunk)(graph, config, int(bounds[c]), int(bounds[c + 1]))
            for c in range(n_chunks)
        )
    walks = [w for part in parts for w in part]

    metadata = asdict(config)
    metadata["ratings"] = list(config.ratings)
    metadata.update({
        "rounds_policy": "per-rating-level",
        "walks": len(walks),
        "tokens": int(sum(w.size for w in walks)),
    })
    logger.info("Sampled %d walks (%d tokens)", metadata["walks"], metadata["tokens"])
    return WalkCorpus(walks, graph.user_count, graph.item_count, metadata)


def write_walks(corpus: WalkCorpus, path: PathLike) -> None:
    """One walk per line, tokens "u{idx}" / "i{idx}" separated by spaces."""
    with open(path, "w", encoding="utf-8") as fh:
        for walk in corpus.walks:
            fh.write(" ".join(corpus.token(int(v)) for v in walk))
            fh.write("\n")


def read_walks(path: PathLike, user_count: int, item_count: int) -> WalkCorpus:
    corpus = WalkCorpus([], user_count, item_count)
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                corpus.walks.append(np.array([corpus.parse_token(t) for t in tokens], dtype=np.int64))
            except ValueError as e:
                raise ParseError(str(e), line_no) from None
    corpus.metadata = {"walks": len(corpus.walks), "tokens": corpus.token_count()}
    return corpus
