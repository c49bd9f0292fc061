import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ramol.memory import (
    Buffer,
    MemoryEntry,
    NeighbourSet,
    insert,
    retrieve,
    similarity_gate,
    similarity_weights,
    uniform_weights,
)


def entry(t, h=None, y=0, d=1, hd=2):
    h = np.full(hd, float(t)) if h is None else np.asarray(h, float)
    return MemoryEntry(np.full(d, float(t)), y, h, t)


def brute_force(entries, q, t_now, K, H):
    """Sort every eligible entry by (distance, -t) in pure Python."""
    elig = [e for e in entries if H is None or t_now - e.t <= H]
    scored = sorted(elig, key=lambda e: (math.dist(e.h, q), -e.t))
    return [e.t for e in scored[:K]]


def ns_of(d):
    d = np.asarray(d, float)
    n = len(d)
    return NeighbourSet(np.zeros((n, 1)), np.zeros(n, int), np.zeros((n, 1)), np.arange(n), d)


# ---- buffer ---------------------------------------------------------------


def test_fifo_eviction():
    b = Buffer(2, 1, 2)
    for t in range(3):
        insert(b, entry(t))
    assert [e.t for e in b.entries()] == [1, 2]


def test_no_eviction_below_capacity():
    b = Buffer(1000, 1, 2)
    for t in range(5):
        b.insert(entry(t))
    assert len(b) == 5


def test_long_run_oldest_timestamp():
    b = Buffer(500, 1, 2)
    for t in range(10000):
        b.insert_arrays(np.zeros(1), 0, np.zeros(2), t)
    assert len(b) == 500
    assert b.timestamps()[0] == 9500 and b.timestamps()[-1] == 9999


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.lists(st.integers(1, 5), min_size=0, max_size=60))
def test_capacity_and_order_property(cap, gaps):
    b = Buffer(cap, 1, 2)
    ts = list(np.cumsum(gaps)) if gaps else []
    for t in ts:
        b.insert(entry(int(t)))
        assert len(b) <= cap
    assert list(b.timestamps()) == [int(t) for t in ts[-cap:]] if ts else len(b) == 0


def test_insert_validation():
    b = Buffer(3, 1, 2)
    b.insert(entry(5))
    with pytest.raises(ValueError):
        b.insert(entry(5))
    with pytest.raises(ValueError):
        b.insert(entry(6, hd=3))
    with pytest.raises(ValueError):
        Buffer(0, 1, 1)


def test_snapshot_round_trip(tmp_path):
    b = Buffer(3, 1, 2)
    for t in range(5):
        b.insert(entry(t, y=t % 2))
    path = tmp_path / "b.json"
    b.export_json(path)
    import json
    c = Buffer.from_dict(json.loads(path.read_text()))
    assert [(e.t, e.y) for e in c.entries()] == [(e.t, e.y) for e in b.entries()]
    for e1, e2 in zip(b.entries(), c.entries()):
        np.testing.assert_array_equal(e1.h, e2.h)


# ---- retrieval ------------------------------------------------------------


def test_retrieve_empty_buffer():
    assert len(retrieve(Buffer(4, 1, 2), np.zeros(2), 0, 3)) == 0


def test_retrieve_pythagorean():
    b = Buffer(4, 1, 2)
    b.insert(entry(0, h=[0.0, 0.0]))
    b.insert(entry(1, h=[3.0, 4.0]))
    ns = retrieve(b, np.zeros(2), 2, 1)
    assert list(ns.t) == [0] and ns.d[0] == 0.0
    ns2 = retrieve(b, np.zeros(2), 2, 2)
    assert list(ns2.d) == [0.0, 5.0]


def test_retrieve_ties_prefer_recent():
    b = Buffer(5, 1, 2)
    for t in range(4):
        b.insert(entry(t, h=[1.0, 0.0] if t % 2 else [-1.0, 0.0]))
    assert list(retrieve(b, np.zeros(2), 4, 3).t) == [3, 2, 1]


def test_retrieve_window_excludes_old():
    b = Buffer(10, 1, 2)
    for t in range(10):
        b.insert(entry(t, h=[0.0, 0.0]))
    ns = retrieve(b, np.zeros(2), 10, 10, H=3)
    assert sorted(ns.t) == [7, 8, 9]
    assert len(retrieve(b, np.zeros(2), 100, 5, H=3)) == 0


def test_retrieve_rejects_bad_args():
    b = Buffer(2, 1, 2)
    with pytest.raises(ValueError):
        retrieve(b, np.zeros(2), 0, 0)
    with pytest.raises(ValueError):
        retrieve(b, np.zeros(3), 0, 1)


def test_retrieve_matches_brute_force_random():
    rng = np.random.default_rng(0)
    b = Buffer(200, 1, 4)
    for t in range(200):
        b.insert(MemoryEntry(np.zeros(1), 0, rng.normal(size=4), t))
    ents = b.entries()
    for _ in range(50):
        q = rng.normal(size=4)
        assert list(retrieve(b, q, 200, 5).t) == brute_force(ents, q, 200, 5, None)


def _exhaustive_retrieval_check(seed, sizes, n_queries):
    """Compare against the brute-force scan for many buffer sizes, K and H.

    Half the buffers hold integer-grid embeddings so distance ties are common.
    Buffers wrap (inserts exceed capacity) so slot order differs from time order.
    """
    rng = np.random.default_rng(seed)
    mismatches = 0
    for size in sizes:
        for grid in (False, True):
            cap = size
            b = Buffer(cap, 1, 3)
            n_insert = size + int(rng.integers(0, size + 1))
            t = 0
            for _ in range(n_insert):
                t += int(rng.integers(1, 4))
                h = rng.integers(-2, 3, size=3).astype(float) if grid else rng.normal(size=3)
                b.insert(MemoryEntry(np.zeros(1), 0, h, t))
            ents = b.entries()
            for _ in range(n_queries):
                q = rng.integers(-2, 3, size=3).astype(float) if grid else rng.normal(size=3)
                t_now = t + 1
                for K in (1, 3, 5):
                    for H in (None, 10, 100):
                        got = list(retrieve(b, q, t_now, K, H).t)
                        if got != brute_force(ents, q, t_now, K, H):
                            mismatches += 1
    return mismatches


def test_retrieve_exhaustive_small_buffers():
    assert _exhaustive_retrieval_check(1, range(1, 257, 5), 4) == 0


def test_shrinking_window_never_adds():
    rng = np.random.default_rng(5)
    b = Buffer(300, 1, 3)
    for t in range(300):
        b.insert(MemoryEntry(np.zeros(1), 0, rng.normal(size=3), t))
    for _ in range(30):
        q = rng.normal(size=3)
        prev = None
        for H in (None, 250, 100, 50, 10, 0):
            got = set(retrieve(b, q, 300, 300, H).t)
            if prev is not None:
                assert got <= prev
            prev = got


def test_retrieval_cost_roughly_linear():
    rng = np.random.default_rng(0)
    times = {}
    for n in (2000, 20000):
        b = Buffer(n, 1, 64)
        for t in range(n):
            b.insert_arrays(np.zeros(1), 0, rng.normal(size=64), t)
        q = rng.normal(size=64)
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(20):
                retrieve(b, q, n, 5)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    # 10x more entries should cost far less than 100x (no quadratic blow-up)
    assert times[20000] / times[2000] < 40


# ---- weighting and gating -------------------------------------------------


def test_similarity_weights_cases():
    tau = 0.7
    ns = similarity_weights(ns_of([0.0, tau * math.log(2)]), tau)
    np.testing.assert_allclose(ns.s, [1.0, 0.5], rtol=1e-15)
    np.testing.assert_allclose(ns.w, [2 / 3, 1 / 3], rtol=1e-15)
    np.testing.assert_array_equal(similarity_weights(ns_of([1.2, 1.2]), 1.0).w, [0.5, 0.5])
    np.testing.assert_array_equal(similarity_weights(ns_of([3.0]), 1.0).w, [1.0])


def test_similarity_weights_survive_underflow():
    ns = similarity_weights(ns_of([2000.0, 2000.0 + math.log(3)]), 1.0)
    assert np.all(ns.s == 0.0)
    np.testing.assert_allclose(ns.w, [0.75, 0.25], rtol=1e-12)


def test_similarity_weights_errors():
    with pytest.raises(ValueError):
        similarity_weights(ns_of([]), 1.0)
    with pytest.raises(ValueError):
        similarity_weights(ns_of([1.0]), 0.0)


def test_gate_cases():
    ns = ns_of([0.0, 1.0, 2.0])
    ns.w = np.array([0.7, 0.2, 0.1])
    out = similarity_gate(ns, 0.5)
    assert list(out.t) == [0]
    np.testing.assert_array_equal(out.w, [1.0])
    assert len(similarity_gate(ns, 0.0)) == 3
    np.testing.assert_allclose(similarity_gate(ns, 0.0).w, [0.7, 0.2, 0.1])
    eq = ns_of([1.0, 1.0, 1.0])
    eq.w = np.full(3, 1 / 3)
    assert len(similarity_gate(eq, 1.0)) == 3


def test_gate_without_renormalization():
    ns = ns_of([0.0, 1.0, 2.0])
    ns.w = np.array([0.5, 0.3, 0.2])
    np.testing.assert_array_equal(similarity_gate(ns, 0.5, renormalize=False).w, [0.5, 0.3])


def test_uniform_weights():
    np.testing.assert_allclose(uniform_weights(ns_of([0.1, 5.0, 9.0])).w, [1 / 3] * 3)
