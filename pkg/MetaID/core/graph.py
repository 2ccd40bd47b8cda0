# core/graph.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple

import numpy as np
from scipy import sparse

from .errors import GraphError
from .ingest import RATING_LEVELS, DatasetIndex

USER = "user"
ITEM = "item"


class Node(NamedTuple):
    kind: str   # "user" or "item"
    index: int


@dataclass(frozen=True)
class Adjacency:
    """
    CSR-style neighbor lists: neighbors of row r are
    indices[indptr[r]:indptr[r + 1]], sorted ascending. Duplicate
    interactions appear as repeated neighbors.
    """
    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, row: int) -> np.ndarray:
        return self.indices[self.indptr[row]:self.indptr[row + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)


def _adjacency(rows: np.ndarray, cols: np.ndarray, n_rows: int) -> Adjacency:
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n_rows)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return Adjacency(indptr=indptr, indices=cols[order].astype(np.int64))


@dataclass(frozen=True)
class InteractionGraph:
    user_count: int
    item_count: int
    user_adj: Dict[int, Adjacency]
    item_adj: Dict[int, Adjacency]
    edge_count: Dict[int, int]

    @property
    def total_edges(self) -> int:
        return sum(self.edge_count.values())

    def node_count(self) -> int:
        return self.user_count + self.item_count

    def rating_matrix(self, rating: int) -> sparse.csr_matrix:
        """Symmetric (m+n) x (m+n) adjacency at one rating level, for graph algorithms."""
        adj = self.user_adj[rating]
        rows = np.repeat(np.arange(self.user_count), adj.degrees())
        cols = adj.indices + self.user_count
        size = self.node_count()
        data = np.ones(rows.size * 2)
        return sparse.csr_matrix(
            (data, (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(size, size),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Per-rating edge lists [[user, item], ...] for debugging dumps."""
        edges: Dict[str, List[List[int]]] = {}
        for r in RATING_LEVELS:
            adj = self.user_adj[r]
            us = np.repeat(np.arange(self.user_count), adj.degrees())
            edges[str(r)] = np.stack([us, adj.indices], axis=1).tolist() if us.size else []
        return {
            "user_count": self.user_count,
            "item_count": self.item_count,
            "edge_count": {str(r): self.edge_count[r] for r in RATING_LEVELS},
            "edges": edges,
        }


def build_graph(index: DatasetIndex) -> InteractionGraph:
    """
    Bipartite user-item adjacency partitioned by rating level.
    """
    m, n = index.user_count, index.item_count
    user_adj: Dict[int, Adjacency] = {}
    item_adj: Dict[int, Adjacency] = {}
    edge_count: Dict[int, int] = {}
    for r in RATING_LEVELS:
        mask = index.ratings == r
        us, its = index.users[mask], index.items[mask]
        user_adj[r] = _adjacency(us, its, m)
        item_adj[r] = _adjacency(its, us, n)
        edge_count[r] = int(mask.sum())
    return InteractionGraph(m, n, user_adj, item_adj, edge_count)


def rating_neighbors(graph: InteractionGraph, node: Node, rating: int) -> np.ndarray:
    """Sorted neighbor indices of `node` at `rating` (items for a user, users for an item)."""
    if rating not in RATING_LEVELS:
        raise GraphError(f"Rating {rating} is outside 1..5.")
    if node.kind == USER:
        limit, adj = graph.user_count, graph.user_adj[rating]
    elif node.kind == ITEM:
        limit, adj = graph.item_count, graph.item_adj[rating]
    else:
        raise GraphError(f"Unknown node kind '{node.kind}'.")
    if not 0 <= node.index < limit:
        raise GraphError(f"{node.kind} index {node.index} out of range [0, {limit}).")
    return adj.neighbors(node.index)
