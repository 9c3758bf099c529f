import heapq
import math
from collections import deque

import numpy as np
import pytest
from sklearn.base import clone

from adsann.bench import brute_force_knn, recall
from adsann.dco import DcoConfig
from adsann.hnsw import HNSWIndex, build_hnsw, hnsw_query, hnsw_search, load_hnsw, save_hnsw
from adsann.vecio import synth_dataset


@pytest.fixture(scope="module")
def blobs():
    X = synth_dataset(3100, 64, 16, 1.0, seed=11, decay=1.5)
    return X[:3000], X[3000:]


@pytest.fixture(scope="module")
def est(blobs):
    return HNSWIndex(M=8, ef_construction=64, random_state=2).fit(blobs[0])


# --- pure-Python reference search -----------------------------------------


def _dco(o, q, r2, mode, delta_d, eps):
    """Sequential float64 DCO on squared quantities; returns (positive, observed_sq, dims)."""
    D = len(o)
    s = 0.0
    for i in range(D):
        t = float(o[i]) - float(q[i])
        s += t * t
        d = i + 1
        if d < D and d % delta_d == 0:
            if mode in ("PLUS", "PLUSPLUS") and s > (1.0 + eps / math.sqrt(d)) ** 2 * d / D * r2:
                return False, s * D / d, d
            if mode == "PD" and s > r2:
                return False, s, d
    return s <= r2, s, D


def reference_search(g, q, K, ef, mode, delta_d=32, eps=2.1):
    data = g.data
    dims = dcos = hops = 0
    trace = []
    cur = g.entry_point
    cur_d2 = sum((float(a) - float(b)) ** 2 for a, b in zip(data[cur], q))
    dims += g.dim
    dcos += 1
    for layer in range(g.max_layer, 0, -1):
        changed = True
        while changed:
            changed = False
            for e in g.neighbors(cur, layer):
                pos, obs, used = _dco(data[e], q, cur_d2, mode, delta_d, eps)
                dims += used
                dcos += 1
                if pos and obs < cur_d2:
                    cur, cur_d2, changed = int(e), obs, True
            hops += changed
    visited = {cur}
    S = [(cur_d2, cur)]
    R = [(-cur_d2, -cur)]
    R1 = [(-cur_d2, -cur)]
    while S:
        if S[0][0] > -R[0][0]:
            break
        _, c = heapq.heappop(S)
        hops += 1
        for e in g.neighbors(c, 0):
            e = int(e)
            if e in visited:
                continue
            visited.add(e)
            r_full = -R[0][0] if len(R) == ef else math.inf
            r2 = (-R1[0][0] if len(R1) == K else math.inf) if mode == "PLUSPLUS" else r_full
            trace.append((r2, r_full, len(R1)))
            pos, obs, used = _dco(data[e], q, r2, mode, delta_d, eps)
            dims += used
            dcos += 1
            if mode == "PLUSPLUS":
                if pos and (len(R1) < K or obs < -R1[0][0]):
                    heapq.heappush(R1, (-obs, -e))
                    if len(R1) > K:
                        heapq.heappop(R1)
                offer = True
            else:
                offer = pos
            if offer and (len(R) < ef or obs < -R[0][0]):
                heapq.heappush(S, (obs, e))
                heapq.heappush(R, (-obs, -e))
                if len(R) > ef:
                    heapq.heappop(R)
    final = R1 if mode == "PLUSPLUS" else R
    best = sorted((-k, -i) for k, i in final)[:K]
    assert visited.issuperset(-i for _, i in R1)
    return [i for _, i in best], [k for k, _ in best], dims, dcos, hops, trace


@pytest.mark.parametrize("mode", ["PLAIN", "PD", "PLUS", "PLUSPLUS"])
def test_compiled_search_matches_reference(est, blobs, mode):
    g = est.graph_
    Q = est.rotation_.transform(blobs[1][:25])
    res = hnsw_search(g if mode in ("PLUS", "PLUSPLUS") else _rotated_only(g), Q, 5, 20, mode)
    for i, q in enumerate(Q):
        ids, keys, dims, dcos, hops, _ = reference_search(g, q, 5, 20, mode)
        assert res.ids[i].tolist() == ids
        np.testing.assert_array_equal(res.distances[i] ** 2, np.sqrt(keys) ** 2)
        assert (res.dims[i], res.dcos[i], res.hops[i]) == (dims, dcos, hops)


def _rotated_only(g):
    from dataclasses import replace

    return replace(g, raw=None)


def test_plusplus_threshold_never_above_plus_threshold(est, blobs):
    g = est.graph_
    Q = est.rotation_.transform(blobs[1][:40])
    checked = 0
    for q in Q:
        *_, trace = reference_search(g, q, 10, 40, "PLUSPLUS")
        fulls = [r for _, r, _ in trace]
        for kth, nef_th, n1 in trace:
            assert n1 <= 10
            assert kth <= nef_th
            checked += 1
        # beam bound is nonincreasing once the set is full
        finite = [r for r in fulls if r < math.inf]
        assert all(a >= b for a, b in zip(finite, finite[1:]))
    assert checked > 1000


# --- structure -------------------------------------------------------------


def test_single_vertex_graph():
    x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    g = build_hnsw(x, M=4, ef_construction=8, seed=0)
    assert g.entry_point == 0 and g.count0[0] == 0
    for mode in ("PLAIN", "PD", "PLUS", "PLUSPLUS"):
        res, stats = hnsw_query(g, np.zeros(3, dtype=np.float32), 1, 1, mode, DcoConfig(delta_d=1))
        assert res.ids.tolist() == [0]
        assert res.distances[0] == pytest.approx(math.sqrt(14))
        assert stats.dcos == 1


def test_degree_bounds_and_reachability():
    X = synth_dataset(10000, 32, 20, 1.0, seed=4, decay=1.0)
    g = build_hnsw(X, M=8, ef_construction=40, seed=1)
    assert g.count0.max() <= 16
    assert g.upper_count.max() <= 8
    slots = np.arange(16)[None, :]
    assert np.all((g.links0 >= 0) == (slots < g.count0[:, None]))
    for layer in range(1, g.max_layer + 1):
        for v, nbrs in g.layer(layer).items():
            assert len(nbrs) <= 8
            assert np.all(g.levels[nbrs] >= layer)
            assert v not in nbrs
    assert g.levels[g.entry_point] == g.max_layer
    seen = np.zeros(g.n, dtype=bool)
    seen[g.entry_point] = True
    todo = deque([g.entry_point])
    while todo:
        v = todo.popleft()
        for e in g.neighbors(v):
            if not seen[e]:
                seen[e] = True
                todo.append(e)
    assert seen.mean() >= 0.999


def test_level_distribution():
    g = build_hnsw(np.random.default_rng(0).normal(size=(4000, 4)).astype(np.float32), M=4, ef_construction=8, seed=3)
    # P(level >= 1) = 1 / M
    assert np.mean(g.levels >= 1) == pytest.approx(0.25, abs=0.03)


def test_build_validation():
    X = np.ones((5, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        build_hnsw(X, M=1)
    with pytest.raises(ValueError):
        build_hnsw(X, M=8, ef_construction=4)
    with pytest.raises(ValueError):
        build_hnsw(np.ones((0, 3), dtype=np.float32))


# --- query modes -----------------------------------------------------------


def test_pd_equals_plain(est, blobs):
    Q = blobs[1]
    a = est.search(Q, 10, ef=50, mode="PLAIN")
    b = est.search(Q, 10, ef=50, mode="HNSW*")
    np.testing.assert_array_equal(a.ids, b.ids)
    np.testing.assert_array_equal(a.distances, b.distances)
    assert np.all(b.dims <= a.dims)


def test_plus_with_huge_epsilon_equals_plain(est, blobs):
    g = _rotated_only(est.graph_)
    Q = est.rotation_.transform(blobs[1])
    a = hnsw_search(g, Q, 10, 50, "PLAIN")
    b = hnsw_search(g, Q, 10, 50, "PLUS", DcoConfig(epsilon0=1e6))
    np.testing.assert_array_equal(a.ids, b.ids)
    np.testing.assert_array_equal(a.distances, b.distances)
    np.testing.assert_array_equal(a.dims, b.dims)


def test_modes_keep_recall_and_save_dims(est, blobs):
    X, Q = blobs
    gt, _ = brute_force_knn(X, Q, 10)
    out = {}
    for mode in ("PLAIN", "PLUS", "PLUSPLUS"):
        res = est.search(Q, 10, ef=100, mode=mode)
        out[mode] = (np.mean([recall(a, b, 10) for a, b in zip(res.ids, gt)]), res.dims.mean())
    assert abs(out["PLUS"][0] - out["PLAIN"][0]) <= 0.005
    assert abs(out["PLUSPLUS"][0] - out["PLAIN"][0]) <= 0.005
    assert out["PLUSPLUS"][1] < out["PLUS"][1] < out["PLAIN"][1]


def test_returned_distances_are_exact(est, blobs):
    X, Q = blobs
    for mode in ("PLUS", "PLUSPLUS"):
        res = est.search(Q, 10, ef=30, mode=mode)
        for ids, dist, q in zip(res.ids, res.distances, Q):
            exact = np.linalg.norm(X[ids].astype(np.float64) - q, axis=1)
            np.testing.assert_allclose(dist, exact, rtol=1e-4)


def test_database_vector_found(est, blobs):
    X, _ = blobs
    for i in (0, 1234):
        res, stats = est.query(X[i], 1, ef=20, mode="PLUSPLUS")
        assert res.ids.tolist() == [i]
        assert stats.dims > 0 and stats.dcos > 0


def test_ef_smaller_than_k_rejected(est, blobs):
    with pytest.raises(ValueError):
        est.search(blobs[1], 10, ef=5)
    with pytest.raises(ValueError):
        est.search(blobs[1], 10, mode="HNSW+++")


def test_persistence_round_trip(tmp_path, est, blobs):
    save_hnsw(est.graph_, tmp_path / "g")
    g = load_hnsw(tmp_path / "g")
    for name in ("data", "raw", "levels", "links0", "count0", "upper_offset", "upper_count"):
        np.testing.assert_array_equal(getattr(g, name), getattr(est.graph_, name))
    assert (g.entry_point, g.max_layer, g.M) == (est.graph_.entry_point, est.graph_.max_layer, 8)
    loaded = HNSWIndex.from_graph(g)
    for mode in ("PLAIN", "PLUSPLUS"):
        a = est.search(blobs[1], 10, ef=40, mode=mode)
        b = loaded.search(blobs[1], 10, ef=40, mode=mode)
        np.testing.assert_array_equal(a.ids, b.ids)


def test_estimator_api(est, blobs):
    params = est.get_params()
    assert params["M"] == 8 and params["mode"] == "PLUSPLUS"
    assert clone(est).get_params() == params
    dist, ids = est.kneighbors(blobs[1], n_neighbors=3)
    assert dist.shape == ids.shape == (100, 3)
    with pytest.raises(ValueError):
        est.kneighbors(blobs[1][:, :5])
