import numpy as np
import pytest

from dqa.errors import DataError, DimensionMismatchError, DuplicateIdError
from dqa.retrieval import build_index, load_index, save_index, top_k


def _random_items(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        v = rng.normal(size=dim)
        items.append((f"v{i:05d}", v / np.linalg.norm(v)))
    return items


def brute_force(items, query, k):
    """Independent oracle: full scan, sort by (-cosine, id), truncate."""
    scored = [(item_id, float(np.dot(vec, query))) for item_id, vec in items]
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[: min(k, len(scored))]


def test_single_item_index():
    items = _random_items(1, 8)
    index = build_index(items)
    assert len(index) == 1
    hood = top_k(index, items[0][1], 3)
    assert hood.hits[0][0] == "v00000"
    assert hood.hits[0][1] == pytest.approx(1.0, abs=1e-9)


def test_matches_brute_force_oracle():
    items = _random_items(500, 32, seed=1)
    index = build_index(items)
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = rng.normal(size=32)
        q /= np.linalg.norm(q)
        hood = top_k(index, q, 25)
        expected = brute_force(items, q, 25)
        assert [h[0] for h in hood.hits] == [e[0] for e in expected]


def test_order_independence():
    items = _random_items(50, 16, seed=3)
    q = items[7][1]
    a = top_k(build_index(items), q, 10)
    b = top_k(build_index(list(reversed(items))), q, 10)
    assert a.hits == b.hits


def test_k_larger_than_index():
    items = _random_items(5, 8)
    hood = top_k(build_index(items), items[0][1], 99)
    assert len(hood.hits) == 5
    scores = [s for _, s in hood.hits]
    assert scores == sorted(scores, reverse=True)
    assert hood.k_requested == 99


def test_k_nonpositive_rejected():
    index = build_index(_random_items(3, 4))
    with pytest.raises(DataError):
        top_k(index, np.ones(4) / 2.0, 0)


def test_tie_break_ascending_id():
    v = np.zeros(4)
    v[0] = 1.0
    index = build_index([("b", v), ("a", v), ("c", v)])
    hood = top_k(index, v, 3)
    assert [h[0] for h in hood.hits] == ["a", "b", "c"]


def test_prefix_monotonicity():
    items = _random_items(40, 8, seed=5)
    index = build_index(items)
    q = np.ones(8) / np.sqrt(8)
    prev = []
    for k in range(1, 15):
        hits = [h[0] for h in top_k(index, q, k).hits]
        assert hits[: len(prev)] == prev
        prev = hits


def test_score_bounds():
    items = _random_items(100, 8, seed=6)
    index = build_index(items)
    q = items[3][1]
    for _, score in top_k(index, q, 100).hits:
        assert -1.0 - 1e-12 <= score <= 1.0 + 1e-12


def test_duplicate_id_rejected():
    v = np.ones(4)
    with pytest.raises(DuplicateIdError):
        build_index([("a", v), ("a", v)])


def test_dimension_mismatch_rejected():
    with pytest.raises(DimensionMismatchError):
        build_index([("a", np.ones(4)), ("b", np.ones(5))])
    index = build_index(_random_items(3, 4))
    with pytest.raises(DimensionMismatchError):
        top_k(index, np.ones(8), 1)


def test_empty_index_rejected():
    with pytest.raises(DataError):
        build_index([])


def test_serialization_roundtrip(tmp_path):
    items = _random_items(30, 16, seed=9)
    index = build_index(items)
    path = tmp_path / "index.jsonl"
    save_index(index, path)
    loaded = load_index(path)
    q = items[4][1]
    assert top_k(index, q, 10).hits == top_k(loaded, q, 10).hits


def test_load_rejects_wrong_kind(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"format_version": 1, "kind": "something_else"}\n')
    with pytest.raises(DataError):
        load_index(path)
