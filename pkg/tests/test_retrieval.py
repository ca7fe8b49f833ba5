import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pulse.retrieval import (
    FoldLeakageError,
    NormStats,
    PeerIndex,
    build_peer_index,
    cosine,
    fingerprint,
    fit_tfidf,
    rank_peers,
    tokenize,
)
from pulse.timestore import FEATURES

WORDS = ["tired", "walk", "pain", "family", "work", "slept", "anxious", "calm", "scan", "call", "Rain", "tea"]
docs = st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8).map(" ".join), min_size=1, max_size=12)


def test_tokenize():
    assert tokenize("Slept badly -- 3 hours, again!") == ["slept", "badly", "3", "hours", "again"]


def test_idf_frozen():
    m = fit_tfidf(["a b", "a c", "a"])
    assert m.idf[m.vocabulary["a"]] == pytest.approx(math.log(4 / 4) + 1)
    assert m.idf[m.vocabulary["b"]] == pytest.approx(math.log(4 / 2) + 1)
    with pytest.raises(ValueError):
        fit_tfidf([])


@given(docs, st.lists(st.sampled_from(WORDS + ["unseen"]), min_size=1, max_size=6).map(" ".join))
def test_tfidf_cosine_matches_dense_oracle(corpus, query):
    model = fit_tfidf(corpus)
    vec = oracles.dense_tfidf(corpus)
    q = model.embed(query)
    norm = math.sqrt(sum(v * v for v in q.values()))
    assert norm == 0.0 or abs(norm - 1.0) < 1e-12
    for d in corpus:
        assert abs(cosine(q, model.embed(d)) - oracles.dense_cos(vec(query), vec(d))) < 1e-9


def test_cosine_edge_cases():
    assert cosine([0.0, 0.0], [1.0, 2.0]) == 0.0
    assert cosine({}, {1: 1.0}) == 0.0
    with pytest.raises(TypeError):
        cosine({1: 1.0}, [1.0])
    with pytest.raises(ValueError):
        cosine([1.0], [1.0, 2.0])


def test_fingerprint_normalisation_and_mask():
    stats = NormStats.fit([[1.0, None] + [0.0] * 13, [3.0, None] + [0.0] * 13])
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
    fp = fingerprint([5.0, None] + [0.0] * 13, stats)
    assert fp.values[0] == 3.0
    assert fp.values[1] == 0.0 and fp.mask[1] is False
    # zero-variance features map to 0
    assert fp.values[2] == 0.0
    assert len(fp.values) == len(FEATURES)


def test_fold_leakage_is_refused(small_store):
    users = small_store.user_ids
    with pytest.raises(FoldLeakageError):
        build_peer_index(small_store, users[:3], eval_users=users[2:])


def test_index_roundtrip(tmp_path, small_store):
    users = small_store.user_ids
    idx = build_peer_index(small_store, users[1:], eval_users=users[:1])
    idx.save(tmp_path / "i.json")
    back = PeerIndex.load(tmp_path / "i.json")
    assert back.to_json() == idx.to_json()
    q = idx.rows[0].fingerprint
    assert rank_peers(back, q, "sensing", None, 5) == rank_peers(idx, q, "sensing", None, 5)


def test_rank_peers_exclusion_and_ties(small_store):
    users = small_store.user_ids
    idx = build_peer_index(small_store, users)
    row = next(r for r in idx.rows if r.fingerprint is not None)
    got = rank_peers(idx, row.fingerprint, "sensing", row.user_id, 25)
    assert got and all(m.user_id != row.user_id for m in got)
    keys = [(-m.similarity, m.entry_ref) for m in got]
    assert keys == sorted(keys)
    with pytest.raises(ValueError):
        rank_peers(idx, row.fingerprint, "sensing", None, 0)
    with pytest.raises(ValueError):
        rank_peers(idx, row.fingerprint, "audio", None, 3)
