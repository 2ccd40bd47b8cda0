from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from sklearn.preprocessing import normalize

from core.cluster import ClusterConfig, ClusterModel, cluster_purity, kmeans_cosine, rank_within_cluster
from core.embed import EmbeddingTable
from core.errors import ClusterError, ConfigError


def _angles(*degrees):
    rad = np.radians(degrees)
    return np.stack([np.cos(rad), np.sin(rad)], axis=1)


def _single_cluster_model(n):
    return ClusterModel(
        centroids=np.array([[1.0, 0.0]]),
        assignment=np.zeros(n, dtype=np.int64),
        fine_rank=np.zeros(n, dtype=np.int64),
        cluster_sizes=np.array([n]),
        config=ClusterConfig(groups=1),
    )


def test_defaults():
    assert ClusterConfig().groups == 100


@pytest.mark.parametrize("kwargs", [{"groups": 0}, {"max_iters": 0}, {"tol": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ClusterConfig(**kwargs)


def test_single_group_centroid_is_global_mean():
    x = np.random.default_rng(0).normal(size=(12, 3))
    model = kmeans_cosine(x, ClusterConfig(groups=1))
    np.testing.assert_allclose(model.centroids[0], x.mean(axis=0), atol=1e-12)
    assert sorted(model.fine_rank.tolist()) == list(range(1, 13))


def test_four_angles_match_exhaustive_partition():
    x = _angles(0, 5, 90, 95)
    model = kmeans_cosine(x, ClusterConfig(groups=2, seed=1))

    def cost(labels):
        total = 0.0
        for g in (0, 1):
            members = x[np.asarray(labels) == g]
            if members.size == 0:
                return math.inf
            direction = normalize(members.mean(axis=0, keepdims=True))[0]
            total += float(np.sum(1.0 - normalize(members) @ direction))
        return total

    best = min(itertools.product((0, 1), repeat=4), key=cost)
    found = {frozenset(np.flatnonzero(model.assignment == g).tolist()) for g in (0, 1)}
    expected = {frozenset(np.flatnonzero(np.asarray(best) == g).tolist()) for g in (0, 1)}
    assert found == expected == {frozenset({0, 1}), frozenset({2, 3})}


def test_accepts_embedding_table():
    x = _angles(0, 5, 90, 95)
    table = EmbeddingTable(x, np.zeros_like(x), 2, 2)
    model = kmeans_cosine(table, ClusterConfig(groups=2))
    assert model.entity_count == 4


def test_rank_single_member():
    model = rank_within_cluster(_single_cluster_model(1), np.array([[0.3, 0.4]]))
    assert model.fine_rank.tolist() == [1]


def test_rank_by_cosine_distance():
    # cosine distances 0.3 and 0.1 to the centroid direction
    x = np.array([[0.7, math.sqrt(1 - 0.49)], [0.9, math.sqrt(1 - 0.81)]])
    model = rank_within_cluster(_single_cluster_model(2), x)
    assert model.fine_rank.tolist() == [2, 1]


def test_rank_ties_go_to_lower_index():
    x = np.array([[1.0, 1.0], [0.5, 0.1], [0.2, 1.0], [1.0, 1.0]])
    model = rank_within_cluster(_single_cluster_model(4), x)
    dist = 1.0 - normalize(x) @ np.array([1.0, 0.0])
    oracle = sorted(range(4), key=lambda k: dist[k])  # stable sort keeps index order on ties
    expected = np.empty(4, dtype=int)
    expected[oracle] = np.arange(1, 5)
    assert model.fine_rank.tolist() == expected.tolist()
    assert model.fine_rank[0] < model.fine_rank[3]


def _fit_random(seed=0):
    x = np.random.default_rng(seed).normal(size=(60, 5))
    return x, kmeans_cosine(x, ClusterConfig(groups=4, tol=0.0, seed=seed))


def test_model_invariants():
    x, model = _fit_random()
    assert model.assignment.min() >= 0 and model.assignment.max() < 4
    for g in range(4):
        members = model.assignment == g
        assert sorted(model.fine_rank[members].tolist()) == list(range(1, members.sum() + 1))
        np.testing.assert_allclose(model.centroids[g], x[members].mean(axis=0), atol=1e-9)
    assert model.cluster_sizes.sum() == 60


def test_assignment_optimality():
    x, model = _fit_random(3)
    sims = normalize(x) @ model.directions().T
    own = sims[np.arange(60), model.assignment]
    assert np.all(own >= sims.max(axis=1) - 1e-9)


def test_deterministic():
    _, a = _fit_random(5)
    _, b = _fit_random(5)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_dict_round_trip():
    _, model = _fit_random()
    again = ClusterModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(again.fine_rank, model.fine_rank)
    assert again.config == model.config
    assert again.iterations == model.iterations


def test_too_few_distinct_vectors():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ClusterError):
        kmeans_cosine(x, ClusterConfig(groups=3))


def test_zero_vector_rejected():
    with pytest.raises(ClusterError):
        kmeans_cosine(np.array([[1.0, 0.0], [0.0, 0.0]]), ClusterConfig(groups=1))


def test_purity():
    assert cluster_purity([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert cluster_purity([0, 0, 0, 0], [0, 0, 1, 1]) == 0.5
