# core/cluster.py
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional, Union

import numpy as np
from sklearn.cluster import kmeans_plusplus
from sklearn.preprocessing import normalize

from .embed import EmbeddingTable
from .errors import ClusterError, ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    groups: int = 100
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.groups < 1:
            raise ConfigError("groups must be >= 1.")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1.")
        if self.tol < 0:
            raise ConfigError("tol must be >= 0.")


@dataclass
class ClusterModel:
    """
    `centroids[g]` is the plain mean of the raw vectors assigned to g;
    assignment compares against its normalised direction.
    """
    centroids: np.ndarray
    assignment: np.ndarray
    fine_rank: np.ndarray
    cluster_sizes: np.ndarray
    config: ClusterConfig
    iterations: int = 0

    @property
    def groups(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def entity_count(self) -> int:
        return int(self.assignment.size)

    def directions(self) -> np.ndarray:
        return normalize(self.centroids)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "centroids": self.centroids.tolist(),
            "assignment": self.assignment.tolist(),
            "fine_rank": self.fine_rank.tolist(),
            "cluster_sizes": self.cluster_sizes.tolist(),
            "iterations": self.iterations,
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ClusterModel":
        return cls(
            centroids=np.asarray(payload["centroids"], dtype=np.float64),
            assignment=np.asarray(payload["assignment"], dtype=np.int64),
            fine_rank=np.asarray(payload["fine_rank"], dtype=np.int64),
            cluster_sizes=np.asarray(payload["cluster_sizes"], dtype=np.int64),
            config=ClusterConfig(**payload["config"]),
            iterations=int(payload.get("iterations", 0)),
        )


def _as_matrix(embeddings: Union[EmbeddingTable, np.ndarray]) -> np.ndarray:
    if isinstance(embeddings, EmbeddingTable):
        return np.asarray(embeddings.input_vectors, dtype=np.float64)
    return np.asarray(embeddings, dtype=np.float64)


def _raw_means(x: np.ndarray, labels: np.ndarray, groups: int) -> np.ndarray:
    # np.add.at accumulates in entity-index order
    sums = np.zeros((groups, x.shape[1]))
    np.add.at(sums, labels, x)
    sizes = np.bincount(labels, minlength=groups)
    return sums / np.maximum(sizes, 1)[:, None]


def _directions(means: np.ndarray, unit: np.ndarray, labels: np.ndarray) -> np.ndarray:
    dirs = normalize(means)
    dead = np.linalg.norm(means, axis=1) == 0
    for g in np.flatnonzero(dead):
        # raw members cancel out; fall back to their unit mean
        dirs[g] = normalize(unit[labels == g].mean(axis=0, keepdims=True))[0]
    return dirs


def _repair_empty(labels: np.ndarray, sims: np.ndarray, groups: int) -> np.ndarray:
    """Give each empty cluster the point farthest from its current centroid."""
    sizes = np.bincount(labels, minlength=groups)
    empty = np.flatnonzero(sizes == 0)
    if empty.size == 0:
        return labels
    labels = labels.copy()
    dist = 1.0 - sims[np.arange(labels.size), labels]
    for g in empty:
        eligible = sizes[labels] > 1
        if not np.any(eligible):
            break
        candidates = np.flatnonzero(eligible)
        victim = candidates[np.argmax(dist[candidates])]
        sizes[labels[victim]] -= 1
        labels[victim] = g
        sizes[g] = 1
        logger.warning("Empty cluster %d repaired with entity %d", g, victim)
    return labels


def kmeans_cosine(embeddings: Union[EmbeddingTable, np.ndarray], config: ClusterConfig = ClusterConfig()) -> ClusterModel:
    """
    Spherical K-Means: Lloyd iterations on unit-normalised vectors, k-means++
    seeding, centroids reported as raw-vector means.
    """
    x = _as_matrix(embeddings)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ClusterError("Need a non-empty 2-D matrix of vectors.")
    if not np.all(np.isfinite(x)):
        raise ClusterError("Embedding vectors must be finite.")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        zero = int(np.flatnonzero(norms == 0)[0])
        raise ClusterError(f"Entity {zero} has a zero vector; cosine similarity is undefined.")
    groups = config.groups
    distinct = np.unique(x, axis=0).shape[0]
    if distinct < groups:
        raise ClusterError(f"Only {distinct} distinct vectors for {groups} clusters.")

    unit = normalize(x)
    # RandomState takes 32-bit seeds only
    seeds, _ = kmeans_plusplus(unit, n_clusters=groups, random_state=config.seed % 2**32)
    dirs = normalize(seeds)

    prev: Optional[np.ndarray] = None
    labels = np.zeros(x.shape[0], dtype=np.int64)
    means = _raw_means(x, labels, groups)
    it = 0
    for it in range(1, config.max_iters + 1):
        sims = unit @ dirs.T
        labels = _repair_empty(np.argmax(sims, axis=1).astype(np.int64), sims, groups)
        means = _raw_means(x, labels, groups)
        new_dirs = _directions(means, unit, labels)
        shift = float(np.max(1.0 - np.sum(new_dirs * dirs, axis=1)))
        dirs = new_dirs
        if prev is not None and np.array_equal(labels, prev):
            break
        if shift < config.tol:
            break
        prev = labels
    logger.info("K-Means (cosine) with G=%d stopped after %d iterations", groups, it)

    model = ClusterModel(
        centroids=means,
        assignment=labels,
        fine_rank=np.zeros_like(labels),
        cluster_sizes=np.bincount(labels, minlength=groups),
        config=config,
        iterations=it,
    )
    return rank_within_cluster(model, x)


def rank_within_cluster(model: ClusterModel, embeddings: Union[EmbeddingTable, np.ndarray]) -> ClusterModel:
    """
    Rank members of each cluster 1..size by ascending cosine distance to the
    centroid; ties go to the lower entity index.
    """
    x = _as_matrix(embeddings)
    labels = model.assignment
    unit = normalize(x)
    dirs = model.directions()
    dist = 1.0 - np.einsum("nd,nd->n", unit, dirs[labels])

    order = np.lexsort((np.arange(labels.size), dist, labels))
    sizes = np.bincount(labels, minlength=model.groups)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    ranks = np.empty_like(labels)
    ranks[order] = np.arange(labels.size) - starts[labels[order]] + 1
    return replace(model, fine_rank=ranks, cluster_sizes=sizes)


def cluster_purity(labels: np.ndarray, truth: np.ndarray) -> float:
    """Share of entities whose cluster's majority true class matches their own."""
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    hits = 0
    for g in np.unique(labels):
        members = truth[labels == g]
        hits += int(np.bincount(members).max())
    return hits / labels.size
