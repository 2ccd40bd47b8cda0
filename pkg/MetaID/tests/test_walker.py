from __future__ import annotations

import numpy as np
import pytest

from core.errors import ConfigError, GraphError, ParseError
from core.graph import build_graph
from core.ingest import InteractionRecord, build_index
from core.walker import WalkConfig, WalkCorpus, read_walks, sample_walks, write_walks


def _edge_sets(graph):
    m = graph.user_count
    edges = {}
    for r in range(1, 6):
        adj = graph.user_adj[r]
        edges[r] = {
            frozenset((u, int(i) + m))
            for u in range(m)
            for i in adj.neighbors(u)
        }
    return edges


def test_defaults():
    cfg = WalkConfig()
    assert (cfg.walk_length, cfg.rounds_per_node) == (64, 32)


@pytest.mark.parametrize("kwargs", [{"walk_length": 1}, {"rounds_per_node": 0}, {"ratings": (0,)}, {"ratings": ()}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        WalkConfig(**kwargs)


def test_tiny_rating_five_walks_from_u1_are_forced(tiny_index):
    graph = build_graph(tiny_index)
    corpus = sample_walks(graph, WalkConfig(seed=5, ratings=(5,)))
    from_u1 = [w for w in corpus.walks if w[0] == 0]
    assert len(from_u1) == 32
    # u1 is node 0, i1 is node 3
    expected = np.array([0, 3] * 32)
    for walk in from_u1:
        np.testing.assert_array_equal(walk, expected)


def test_walks_follow_fixed_rating_edges(block_index):
    graph = build_graph(block_index)
    edges = _edge_sets(graph)
    corpus = sample_walks(graph, WalkConfig(walk_length=12, rounds_per_node=3, seed=1))
    m = graph.user_count
    for walk in corpus.walks:
        assert walk.size >= 2
        kinds = walk >= m
        assert np.all(kinds[1:] != kinds[:-1])
        pairs = {frozenset((int(a), int(b))) for a, b in zip(walk[:-1], walk[1:])}
        assert any(pairs <= edges[r] for r in range(1, 6))


def test_count_bound_and_isolated_node():
    records = [
        InteractionRecord("a", "x", 5, 0),
        InteractionRecord("b", "x", 5, 1),
        InteractionRecord("c", "y", 2, 2),
    ]
    graph = build_graph(build_index(records))
    cfg = WalkConfig(walk_length=6, rounds_per_node=4, seed=0)
    corpus = sample_walks(graph, cfg)
    active = graph.node_count()
    assert len(corpus.walks) <= active * 5 * cfg.rounds_per_node
    # every node has exactly one rating level with edges
    assert len(corpus.walks) == active * cfg.rounds_per_node


def test_deterministic_across_worker_counts(block_index):
    graph = build_graph(block_index)
    cfg = WalkConfig(walk_length=10, rounds_per_node=2, seed=3)
    one = sample_walks(graph, cfg, workers=1)
    many = sample_walks(graph, cfg, workers=3)
    assert len(one.walks) == len(many.walks)
    for a, b in zip(one.walks, many.walks):
        np.testing.assert_array_equal(a, b)


def test_metadata_records_rounds_policy(tiny_index):
    corpus = sample_walks(build_graph(tiny_index), WalkConfig(walk_length=4, rounds_per_node=1))
    assert corpus.metadata["rounds_policy"] == "per-rating-level"
    assert corpus.metadata["walks"] == len(corpus.walks)
    assert corpus.metadata["tokens"] == corpus.token_count()


def test_zero_edges_rejected(tiny_index):
    graph = build_graph(tiny_index)
    empty = type(graph)(graph.user_count, graph.item_count, graph.user_adj, graph.item_adj, {r: 0 for r in range(1, 6)})
    with pytest.raises(GraphError):
        sample_walks(empty)


def test_text_round_trip(tmp_path, tiny_index):
    corpus = sample_walks(build_graph(tiny_index), WalkConfig(walk_length=5, rounds_per_node=2, seed=8))
    path = tmp_path / "walks.txt"
    write_walks(corpus, path)
    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert all(tok[0] in "ui" for tok in first.split(" "))
    again = read_walks(path, tiny_index.user_count, tiny_index.item_count)
    assert len(again.walks) == len(corpus.walks)
    for a, b in zip(again.walks, corpus.walks):
        np.testing.assert_array_equal(a, b)


def test_read_walks_rejects_out_of_range(tmp_path):
    path = tmp_path / "walks.txt"
    path.write_text("u0 i0\nu0 i7\n", encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        read_walks(path, 1, 1)
    assert exc.value.line_no == 2


def test_tokens():
    corpus = WalkCorpus([], user_count=2, item_count=3)
    assert corpus.token(1) == "u1"
    assert corpus.token(2) == "i0"
    assert corpus.parse_token("i2") == 4
