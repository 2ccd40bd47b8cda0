from __future__ import annotations

import numpy as np
import pytest

from core.cluster import ClusterConfig, ClusterModel, rank_within_cluster
from core.errors import DataError, UnknownIdError
from core.idgen import (
    IdAssignment,
    assign_meta_ids,
    assign_rid,
    assign_sid,
    build_f_init,
    decode_id,
    digit_pair_tokens,
    read_vocabulary,
    vocabulary_size_report,
    write_f_init,
    write_id_map,
    write_vocabulary,
)
from core.ingest import InteractionRecord, build_index
from core.utils_io import read_json, read_matrix_binary


def _model(assignment, vectors, groups):
    assignment = np.asarray(assignment, dtype=np.int64)
    sums = np.zeros((groups, vectors.shape[1]))
    np.add.at(sums, assignment, vectors)
    sizes = np.bincount(assignment, minlength=groups)
    model = ClusterModel(
        centroids=sums / sizes[:, None],
        assignment=assignment,
        fine_rank=np.zeros_like(assignment),
        cluster_sizes=sizes,
        config=ClusterConfig(groups=groups),
    )
    return rank_within_cluster(model, vectors)


@pytest.fixture
def tiny_model(tiny_index):
    vectors = np.random.default_rng(0).normal(size=(6, 4))
    return _model([0, 1, 0, 1, 1, 1], vectors, 2)


def _large_index(entities_per_kind=5000):
    records = [InteractionRecord(f"u{k}", f"i{k}", 1 + k % 5, k) for k in range(entities_per_kind)]
    return build_index(records)


# ========================
# META ID
# ========================

def test_meta_format(tiny_index, tiny_model):
    assignment, vocab = assign_meta_ids(tiny_model, tiny_index)
    assert assignment.strategy == "META"
    for seq in assignment.user_ids:
        assert seq[0] == "<User>" and len(seq) == 3
    for seq in assignment.item_ids:
        assert seq[0] == "<Item>"
    # u1 is entity 0 in cluster 0
    assert assignment.user_ids[0][1] == "<CT_1>"
    assert assignment.item_ids[2][1] == "<CT_2>"
    # cluster sizes are 2 and 4
    assert len(vocab) == 2 + 2 + 4
    assert [t.surface for t in vocab.by_kind("fine")] == ["<y_1>", "<y_2>", "<y_3>", "<y_4>"]
    assert [t.vocab_index for t in vocab.tokens] == list(range(len(vocab)))


def test_meta_size_mismatch(tiny_index):
    vectors = np.random.default_rng(0).normal(size=(5, 3))
    with pytest.raises(DataError):
        assign_meta_ids(_model([0, 0, 1, 1, 1], vectors, 2), tiny_index)


def test_meta_invariants_at_scale():
    index = _large_index()
    rng = np.random.default_rng(1)
    groups = 100
    labels = rng.integers(0, groups, size=10000)
    labels[:groups] = np.arange(groups)
    model = _model(labels, rng.normal(size=(10000, 8)), groups)
    assignment, vocab = assign_meta_ids(model, index)

    all_ids = assignment.user_ids + assignment.item_ids
    assert len(set(assignment.user_ids)) == index.user_count
    assert len(set(assignment.item_ids)) == index.item_count
    assert len(vocab) == 2 + groups + int(np.bincount(labels).max())

    for e in rng.choice(10000, size=200, replace=False):
        kind, idx = ("user", e) if e < 5000 else ("item", e - 5000)
        assert decode_id(assignment, all_ids[e]) == (kind, idx)

    sample = rng.choice(10000, size=300, replace=False)
    for a in sample[:150]:
        for b in sample[150:]:
            assert (all_ids[a][1] == all_ids[b][1]) == (labels[a] == labels[b])


def test_vocabulary_size_report(tiny_index, tiny_model):
    _, vocab = assign_meta_ids(tiny_model, tiny_index)
    report = vocabulary_size_report(vocab)
    assert report == {"prefix": 2, "coarse": 2, "fine": 4, "total": 8, "total_without_prefix": 6}
    assert vocabulary_size_report(None)["total"] == 0


def test_f_init_scaled_centroids(tiny_index, tiny_model):
    _, vocab = assign_meta_ids(tiny_model, tiny_index)
    vocab = build_f_init(tiny_model, vocab, alpha=0.1, seed=3)
    assert vocab.f_init.shape == (8, 4)
    for g, tok in enumerate(vocab.by_kind("coarse")):
        np.testing.assert_allclose(vocab.f_init[tok.vocab_index], 0.1 * tiny_model.centroids[g])
    others = [t.vocab_index for t in vocab.tokens if t.kind != "coarse"]
    assert np.all(np.abs(vocab.f_init[others]) <= 0.1 / 4)


def test_f_init_zero_alpha(tiny_index, tiny_model):
    _, vocab = assign_meta_ids(tiny_model, tiny_index)
    vocab = build_f_init(tiny_model, vocab, alpha=0.0)
    assert not np.any(vocab.f_init)


def test_f_init_coarse_mismatch(tiny_index, tiny_model):
    _, vocab = assign_meta_ids(tiny_model, tiny_index)
    vectors = np.random.default_rng(0).normal(size=(6, 4))
    with pytest.raises(DataError):
        build_f_init(_model([0, 1, 2, 0, 1, 2], vectors, 3), vocab)


# ========================
# RID / SID
# ========================

@pytest.mark.parametrize("number,tokens", [(2024, ["20", "24"]), (7, ["7"]), (123, ["1", "23"]), (0, ["0"])])
def test_digit_pairs(number, tokens):
    assert digit_pair_tokens(number) == tokens


def test_rid_injective_and_seeded():
    index = _large_index()
    a = assign_rid(index, seed=5)
    assert len(a.reverse) == 10000
    assert all(seq[0] == "user" for seq in a.user_ids)
    assert all(seq[0] == "item" for seq in a.item_ids)
    numbers = [int("".join(seq[1:])) for seq in a.user_ids + a.item_ids]
    assert len(set(numbers)) == 10000
    assert max(numbers) < 100000
    assert assign_rid(index, seed=5).item_ids == a.item_ids


def test_sid_first_touch_order():
    records = [
        InteractionRecord("u1", "a", 5, 10),
        InteractionRecord("u1", "b", 5, 1),
        InteractionRecord("u2", "c", 5, 0),
        InteractionRecord("u2", "a", 5, 11),
    ]
    sid = assign_sid(build_index(records))
    assert sid.item_ids == [("item", "2"), ("item", "1"), ("item", "3")]
    assert sid.user_ids == [("user", "1"), ("user", "2")]


def test_sid_at_scale_is_injective():
    sid = assign_sid(_large_index())
    assert len(sid.reverse) == 10000
    assert sid.item_ids[4999] == ("item", "50", "00")


# ========================
# Decoding and artifacts
# ========================

def test_decode(tiny_index, tiny_model):
    assignment, _ = assign_meta_ids(tiny_model, tiny_index)
    seq = assignment.encode("item", 1)
    assert decode_id(assignment, seq) == ("item", 1)
    assert decode_id(assignment, list(seq)).kind == "item"
    with pytest.raises(UnknownIdError):
        decode_id(assignment, ["<Item>", "<CT_9>", "<y_1>"])
    with pytest.raises(UnknownIdError):
        assignment.encode("item", 3)


def test_duplicate_ids_rejected():
    with pytest.raises(DataError):
        IdAssignment("RID", user_ids=[("user", "1")], item_ids=[("user", "1")])
    with pytest.raises(DataError):
        IdAssignment("NUMERIC", user_ids=[], item_ids=[])


def test_token_surfaces():
    a = IdAssignment("SID", user_ids=[("user", "1")], item_ids=[("item", "1"), ("item", "2")])
    assert a.token_surfaces() == ["user", "1", "item", "2"]
    assert a.surface("item", 1) == "item 2"


def test_artifacts(tmp_path, tiny_index, tiny_model):
    assignment, vocab = assign_meta_ids(tiny_model, tiny_index)
    vocab = build_f_init(tiny_model, vocab, seed=1)

    write_vocabulary(vocab, tmp_path / "vocab.tsv")
    assert (tmp_path / "vocab.tsv").read_text(encoding="utf-8").splitlines()[0] == "<User>\tprefix\t0"
    write_f_init(vocab, tmp_path / "f_init.bin")
    matrix, counts = read_matrix_binary(tmp_path / "f_init.bin")
    assert counts == (8, 0, 4)

    again = read_vocabulary(tmp_path / "vocab.tsv", tmp_path / "f_init.bin")
    assert again.tokens == vocab.tokens
    np.testing.assert_allclose(again.f_init, vocab.f_init, rtol=1e-6, atol=1e-7)

    write_id_map(assignment, tiny_index, tmp_path / "id_map.json")
    payload = read_json(tmp_path / "id_map.json")
    assert payload["items"]["i1"] == list(assignment.item_ids[0])
    restored = IdAssignment.from_id_map(payload, tiny_index)
    assert restored.item_ids == assignment.item_ids


def test_write_f_init_requires_matrix(tmp_path, tiny_index, tiny_model):
    _, vocab = assign_meta_ids(tiny_model, tiny_index)
    with pytest.raises(DataError):
        write_f_init(vocab, tmp_path / "f_init.bin")
