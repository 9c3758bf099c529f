import numpy as np
import pytest
from sklearn.base import clone

from adsann.bench import brute_force_knn, recall
from adsann.dco import DcoConfig
from adsann.ivf import IVFIndex, build_ivf, ivf_query, ivf_search, load_ivf, save_ivf
from adsann.kmeans import assign_nearest
from adsann.transform import apply_dataset, generate_orthogonal
from adsann.vecio import synth_dataset


@pytest.fixture(scope="module")
def blobs():
    X = synth_dataset(4200, 64, 16, 1.0, seed=3, decay=1.5)
    return X[:4000], X[4000:]


@pytest.fixture(scope="module")
def est(blobs):
    return IVFIndex(random_state=5).fit(blobs[0])


def test_singleton_buckets():
    X = np.random.default_rng(0).normal(size=(9, 4)).astype(np.float32)
    idx = build_ivf(X, k_clusters=9, seed=0)
    assert sorted(np.diff(idx.offsets).tolist()) == [1] * 9
    assert sorted(idx.ids.tolist()) == list(range(9))


def test_default_cluster_count(est):
    assert est.index_.n_clusters == 64  # ceil(sqrt(4000))


def test_split_is_a_permutation_of_contiguous(est):
    idx = est.index_
    np.testing.assert_array_equal(np.hstack([idx.a1, idx.a2]), idx.data)
    assert idx.a1.shape[1] == 32


def test_buckets_match_nearest_centroid(blobs, est):
    idx = est.index_
    Y = est.rotation_.transform(blobs[0])
    C = idx.centroids.astype(np.float64)
    oracle = ((Y[:, None, :].astype(np.float64) - C[None]) ** 2).sum(-1).argmin(1)
    for c in range(idx.n_clusters):
        assert np.all(oracle[idx.bucket(c)] == c)
    np.testing.assert_array_equal(idx.data, Y[idx.ids])


def test_full_probe_fd_is_exact(blobs, est):
    X, Q = blobs
    gt, gd = brute_force_knn(X, Q, 10)
    res = est.search(Q, 10, n_probe=est.index_.n_clusters, mode="FD")
    np.testing.assert_array_equal(res.ids, gt)
    np.testing.assert_allclose(res.distances, gd, rtol=1e-6)


def test_database_vector_found_at_distance_zero(blobs, est):
    X, _ = blobs
    for i in (0, 17, 3999):
        for mode in ("FD", "AD", "AD_SPLIT"):
            res = est.query(X[i], 1, n_probe=1, mode=mode)
            assert res.ids.tolist() == [i]
            assert res.distances[0] == pytest.approx(0.0, abs=1e-5)


def test_ad_and_split_identical(blobs, est):
    Q = np.vstack([blobs[1], blobs[0][:100]])[:100]
    for n_probe in (1, 4, 16):
        a = est.search(Q, 10, n_probe=n_probe, mode="AD")
        b = est.search(Q, 10, n_probe=n_probe, mode="IVF++")
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.distances, b.distances)
        np.testing.assert_array_equal(a.dims, b.dims)
        np.testing.assert_array_equal(a.n_candidates, b.n_candidates)


def test_partial_scans_are_exact(blobs, est):
    Q = blobs[1]
    fd = est.search(Q, 10, n_probe=8, mode="FD")
    for mode in ("PD", "PD_SPLIT"):
        pd = est.search(Q, 10, n_probe=8, mode=mode)
        np.testing.assert_array_equal(pd.ids, fd.ids)
        np.testing.assert_array_equal(pd.distances, fd.distances)
        assert np.all(pd.dims <= fd.dims)
    a = est.search(Q, 10, n_probe=8, mode="PD")
    b = est.search(Q, 10, n_probe=8, mode="PD_SPLIT")
    np.testing.assert_array_equal(a.dims, b.dims)


def test_dims_accounting(blobs, est):
    Q = blobs[1]
    fd = est.search(Q, 10, n_probe=6, mode="FD")
    ad = est.search(Q, 10, n_probe=6, mode="AD")
    np.testing.assert_array_equal(fd.dims, 64 * fd.n_candidates)
    np.testing.assert_array_equal(ad.n_candidates, fd.n_candidates)
    assert np.all(ad.dims <= fd.dims)
    assert ad.dims.sum() < fd.dims.sum()


def test_returned_distances_are_exact(blobs, est):
    X, Q = blobs
    res = est.search(Q, 10, n_probe=4, mode="AD_SPLIT")
    for ids, dist, q in zip(res.ids, res.distances, Q):
        exact = np.linalg.norm(X[ids].astype(np.float64) - q, axis=1)
        np.testing.assert_allclose(dist, exact, rtol=1e-4)
        assert np.all(np.diff(dist) >= 0)


def test_fd_recall_monotone_in_probe(blobs, est):
    X, Q = blobs
    gt, _ = brute_force_knn(X, Q, 10)
    recalls = []
    for n_probe in (1, 2, 4, 8, 16, 64):
        res = est.search(Q, 10, n_probe=n_probe, mode="FD")
        recalls.append(np.mean([recall(a, b, 10) for a, b in zip(res.ids, gt)]))
    assert recalls == sorted(recalls)
    assert recalls[-1] == 1.0


def test_equal_distance_keeps_first_in_storage_order():
    # rows 0..3 are identical; the heap keeps whichever it met first
    X = np.zeros((6, 2), dtype=np.float32)
    X[4:] = 10.0
    idx = build_ivf(X, k_clusters=1, seed=0)
    res = ivf_query(idx, np.zeros(2, dtype=np.float32), 2, 1, "FD")
    assert res.ids.tolist() == idx.ids[:2].tolist()


def test_padding_when_fewer_candidates_than_k():
    X = np.arange(8, dtype=np.float32).reshape(4, 2)
    idx = build_ivf(X, k_clusters=4, seed=0)
    res = ivf_search(idx, X[:1], 3, 1, "FD")
    assert res.ids[0].tolist()[1:] == [-1, -1]
    assert np.isinf(res.distances[0, 1:]).all()
    assert res[0].ids.tolist() == [0]


def test_invalid_arguments(est, blobs):
    Q = blobs[1]
    with pytest.raises(ValueError):
        est.search(Q, 10, n_probe=0)
    with pytest.raises(ValueError):
        est.search(Q, 10, n_probe=65)
    with pytest.raises(ValueError):
        est.search(Q, 10, mode="nope")
    with pytest.raises(ValueError):
        est.kneighbors(Q[:, :10])
    contiguous = IVFIndex(layout="contiguous", random_state=5).fit(blobs[0][:500])
    with pytest.raises(ValueError):
        contiguous.search(Q, 10, mode="AD_SPLIT")


def test_raw_query_required_for_baselines(est, blobs):
    with pytest.raises(ValueError):
        ivf_query(est.index_, blobs[1][0], 5, 2, "FD")


def test_low_level_query_matches_estimator(est, blobs):
    q = blobs[1][3]
    m = generate_orthogonal(64, 5)
    qt = apply_dataset(m, q[None])[0]
    a = ivf_query(est.index_, qt, 5, 4, "AD", DcoConfig())
    b = est.query(q, 5, n_probe=4, mode="AD")
    assert a.ids.tolist() == b.ids.tolist()
    c = ivf_query(est.index_, qt, 5, 4, "FD", q_raw=q)
    d = est.query(q, 5, n_probe=4, mode="FD")
    assert c.ids.tolist() == d.ids.tolist()


def test_persistence_round_trip(tmp_path, est, blobs):
    save_ivf(est.index_, tmp_path / "ivf")
    loaded = IVFIndex.from_index(load_ivf(tmp_path / "ivf"))
    Q = blobs[1]
    for mode in ("FD", "AD", "AD_SPLIT"):
        a = est.search(Q, 10, n_probe=4, mode=mode)
        b = loaded.search(Q, 10, n_probe=4, mode=mode)
        np.testing.assert_array_equal(a.ids, b.ids)
        np.testing.assert_array_equal(a.dims, b.dims)


def test_estimator_api(est, blobs):
    params = est.get_params()
    assert params["mode"] == "AD_SPLIT" and params["n_probe"] == 16
    dist, ids = est.kneighbors(blobs[1], n_neighbors=4)
    assert dist.shape == ids.shape == (200, 4)
    assert est.last_result_.dims.shape == (200,)
    assert clone(est).get_params() == params
    ids_only = est.kneighbors(blobs[1][:3], n_neighbors=2, return_distance=False)
    assert ids_only.shape == (3, 2)


def test_kmeans_assignment_helper_agrees_with_buckets(est):
    idx = est.index_
    labels, _ = assign_nearest(idx.data, idx.centroids)
    for c in range(idx.n_clusters):
        assert np.all(labels[idx.offsets[c] : idx.offsets[c + 1]] == c)
