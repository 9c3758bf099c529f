import math

import numpy as np
import pytest

from adsann.bench import (
    CSV_COLUMNS,
    BenchRecord,
    avg_distance_ratio,
    brute_force_knn,
    evaluate,
    linear_scan,
    read_csv,
    recall,
    run_sweep,
    verify_theory,
    write_csv,
)
from adsann.hnsw import HNSWIndex
from adsann.ivf import IVFIndex
from adsann.vecio import synth_dataset


@pytest.fixture(scope="module")
def data():
    X = synth_dataset(2100, 64, 8, 1.0, seed=21, decay=1.5)
    X, Q = X[:2000], X[2000:]
    gi, gd = brute_force_knn(X, Q, 10)
    return X, Q, gi, gd


def test_recall_examples():
    assert recall([1, 2, 4], [1, 2, 3], 3) == pytest.approx(2 / 3)
    assert recall([1, 2, 3], [1, 2, 3], 3) == 1.0
    assert recall([], [1, 2, 3], 3) == 0.0
    assert recall([-1, -1, 2], [2, 5, 6], 3) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        recall([1], [1], 2)


def test_ratio_examples():
    assert avg_distance_ratio([2, 4], [1, 2], 2) == 2.0
    assert avg_distance_ratio([1, 3], [1, 3], 2) == 1.0
    assert avg_distance_ratio([0, 2], [0, 1], 2) == 1.5
    assert math.isnan(avg_distance_ratio([1, 2], [0, 1], 2))


def test_evaluate_flags_undefined_ratios():
    rec, ratio, flagged = evaluate([[1, 2], [3, 4]], [[1.0, 2.0], [1.0, 1.0]], [[1, 2], [3, 5]], [[1.0, 2.0], [0.0, 1.0]], 2)
    assert rec == pytest.approx(0.75)
    assert ratio == 1.0 and flagged == 1


def test_brute_force_examples():
    X = np.array([[0, 0], [3, 4], [1, 0], [0, 2]], dtype=np.float32)
    ids, dist = brute_force_knn(X, X[1:2], 4)
    assert ids[0].tolist() == [1, 3, 2, 0]
    np.testing.assert_allclose(dist[0], [0, math.sqrt(13), math.sqrt(20), 5])


def test_brute_force_ties_by_id():
    X = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.float32)
    ids, _ = brute_force_knn(X, np.zeros((1, 2), dtype=np.float32), 3)
    assert ids[0].tolist() == [0, 1, 2]


def test_brute_force_matches_numpy(data):
    X, Q, gi, gd = data
    d = ((Q[:, None, :].astype(np.float64) - X[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(gi, np.argsort(d, axis=1, kind="stable")[:, :10])
    np.testing.assert_allclose(gd, np.sqrt(np.sort(d, axis=1)[:, :10]), rtol=1e-10)
    with pytest.raises(ValueError):
        brute_force_knn(X, Q, 0)
    with pytest.raises(ValueError):
        brute_force_knn(X, Q[:, :3], 1)


def test_brute_force_agrees_with_exhaustive_ivf(data):
    X, Q, gi, _ = data
    est = IVFIndex(random_state=1).fit(X)
    res = est.search(Q, 10, n_probe=est.index_.n_clusters, mode="FD")
    np.testing.assert_array_equal(res.ids, gi)


def test_ratio_consistent_with_recomputed_distances(data):
    X, Q, gi, gd = data
    est = IVFIndex(random_state=1).fit(X)
    res = est.search(Q, 10, n_probe=2, mode="AD")
    _, ratio, flagged = evaluate(res.ids, res.distances, gi, gd, 10)
    recomputed = np.linalg.norm(X[res.ids].astype(np.float64) - Q[:, None, :], axis=2)
    assert flagged == 0
    assert ratio == pytest.approx(np.mean(recomputed / gd), rel=1e-5)


def test_ivf_sweep(data):
    X, Q, gi, gd = data
    est = IVFIndex(random_state=1).fit(X)
    rows = run_sweep(est, Q, gi, gd, ["IVF", "AD", "AD_SPLIT"], [1, 2, 4, 8], repeats=3)
    assert [r.algo for r in rows[:3]] == ["IVF", "IVF+", "IVF++"]
    fd = [r for r in rows if r.algo == "IVF"]
    assert all(r.dims_pct == 100.0 for r in fd)
    assert [r.recall for r in fd] == sorted(r.recall for r in fd)
    assert all(r.dims_pct < 100 for r in rows if r.algo != "IVF")
    assert all(r.qps > 0 and r.avg_ratio >= 1 for r in rows)


def test_sweep_adds_baseline_for_dims_pct(data):
    X, Q, gi, gd = data
    est = HNSWIndex(M=8, ef_construction=40, random_state=1).fit(X)
    rows = run_sweep(est, Q, gi, gd, ["HNSW++"], [10, 40], repeats=3)
    assert [r.algo for r in rows] == ["HNSW++", "HNSW++"]
    assert all(0 < r.dims_pct < 100 for r in rows)
    with pytest.raises(TypeError):
        run_sweep(object(), Q, gi, gd, ["FD"], [1])


def test_sweep_rows_deterministic_except_qps(data):
    X, Q, gi, gd = data
    est = IVFIndex(random_state=2).fit(X)
    a = run_sweep(est, Q, gi, gd, ["FD", "AD"], [2], repeats=3)
    b = run_sweep(IVFIndex(random_state=2).fit(X), Q, gi, gd, ["FD", "AD"], [2], repeats=3)
    for x, y in zip(a, b):
        x.qps = y.qps = 0.0
        assert x == y


def test_csv_round_trip(tmp_path):
    rows = [BenchRecord("IVF+", 4, 1234.5, 0.95, 1.01, 321.0, 45.5), BenchRecord("HNSW", 100, 99.0, 1.0, 1.0, 10.0, 100.0)]
    text = write_csv(rows, tmp_path / "b.csv")
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_csv(tmp_path / "b.csv") == rows


def test_verify_theory_degenerate_epsilon(data):
    X, Q, _, _ = data
    (row,) = verify_theory(X[:500], Q[:5], 10, [1e6])
    assert row.failure_rate == 0.0
    assert row.avg_dims == 64.0
    assert row.positives >= 50 and row.dcos == 2500


def test_verify_theory_trends(data):
    X, Q, _, _ = data
    rows = verify_theory(X, Q[:20], 20, [0.5, 1.0, 2.0, 3.0])
    fails = [r.failure_rate for r in rows]
    dims = [r.avg_dims for r in rows]
    assert fails == sorted(fails, reverse=True)
    assert dims == sorted(dims)


@pytest.mark.parametrize("mode", ["FD", "PD", "AD", "AD_SPLIT"])
def test_linear_scan(data, mode):
    X, Q, gi, _ = data
    res = linear_scan(X, Q, 10, mode)
    rec = np.mean([recall(a, b, 10) for a, b in zip(res.ids, gi)])
    assert rec >= 0.99
    if mode == "FD":
        assert rec == 1.0 and np.all(res.dims == 64 * 2000)
