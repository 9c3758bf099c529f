"""Inverted-file (IVF) index with pluggable distance comparisons.

Query modes (benchmark labels in parentheses):

``FD`` (IVF)
    full-dimension scan of raw vectors.
``PD`` (IVF*)
    partial scan of raw vectors.
``PD_SPLIT`` (IVF**)
    partial scan over the split layout.
``AD`` (IVF+)
    ADSampling over rotated vectors.
``AD_SPLIT`` (IVF++)
    ADSampling over the split layout: the first ``d1`` coordinates of every
    candidate are read from one contiguous array before any of the remaining
    coordinates are touched.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, validate_data

from . import _heap as H
from . import _kernels as kern
from .dco import DEFAULT_DELTA_D, DEFAULT_EPSILON0, DcoConfig
from .kmeans import assign_nearest, kmeans
from .transform import RandomOrthogonalTransform, apply_dataset, generate_orthogonal
from .vecio import read_fvecs, read_ivecs, write_fvecs, write_ivecs

__all__ = ["IvfIndex", "KnnResult", "build_ivf", "ivf_query", "ivf_search", "BatchResult", "save_ivf", "load_ivf", "IVFIndex", "MODES"]

MODES = ("FD", "PD", "PD_SPLIT", "AD", "AD_SPLIT")
_ALIASES = {"IVF": "FD", "IVF*": "PD", "IVF**": "PD_SPLIT", "IVF+": "AD", "IVF++": "AD_SPLIT"}
LABELS = {v: k for k, v in _ALIASES.items()}


def canonical_mode(mode: str) -> str:
    m = mode.upper()
    m = _ALIASES.get(m, m)
    if m not in MODES:
        raise ValueError(f"unknown IVF mode {mode!r}; expected one of {MODES} or {tuple(_ALIASES)}")
    return m


@dataclass
class KnnResult:
    ids: np.ndarray
    distances: np.ndarray
    dims: int = 0
    n_candidates: int = 0
    wall_time: float = 0.0


@dataclass(eq=False)
class IvfIndex:
    """Bucket-ordered storage; row ``j`` of every array belongs to ``ids[j]``.

    Cluster ``c`` owns rows ``offsets[c]:offsets[c + 1]``. ``a1``/``a2``
    (and ``raw_a1``/``raw_a2``) are only present for the split layout.
    """

    centroids: np.ndarray
    offsets: np.ndarray
    ids: np.ndarray
    data: np.ndarray
    seed: int
    layout: str = "contiguous"
    d1: int = 0
    a1: np.ndarray | None = field(default=None, repr=False)
    a2: np.ndarray | None = field(default=None, repr=False)
    raw_centroids: np.ndarray | None = field(default=None, repr=False)
    raw: np.ndarray | None = field(default=None, repr=False)
    raw_a1: np.ndarray | None = field(default=None, repr=False)
    raw_a2: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def bucket(self, c: int) -> np.ndarray:
        return self.ids[self.offsets[c] : self.offsets[c + 1]]


def _split(x: np.ndarray, d1: int):
    return np.ascontiguousarray(x[:, :d1]), np.ascontiguousarray(x[:, d1:])


def build_ivf(
    ds_transformed,
    k_clusters: int | None = None,
    seed: int = 42,
    layout: str = "contiguous",
    d1: int = DEFAULT_DELTA_D,
    raw=None,
    raw_centroids_map=None,
    max_iters: int = 25,
) -> IvfIndex:
    """Cluster the (rotated) vectors and lay them out bucket by bucket.

    ``raw`` optionally carries the unrotated vectors for the baseline modes;
    ``raw_centroids_map`` maps rotated centroids back to raw space (the
    inverse rotation), needed to probe with raw queries.
    """
    X = np.ascontiguousarray(ds_transformed, dtype=np.float32)
    n, dim = X.shape
    if k_clusters is None:
        k_clusters = math.ceil(math.sqrt(n))
    layout = layout.lower()
    if layout not in ("contiguous", "split"):
        raise ValueError(f"layout must be 'contiguous' or 'split', got {layout!r}")
    if layout == "split" and not 1 <= d1 < dim:
        raise ValueError(f"split layout needs 1 <= d1 < D, got d1={d1}, D={dim}")

    km = kmeans(X, k_clusters, max_iters=max_iters, seed=seed)
    centroids = km.centroids.astype(np.float32)
    labels, _ = assign_nearest(X, centroids)
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=k_clusters)
    offsets = np.zeros(k_clusters + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])

    idx = IvfIndex(
        centroids=centroids,
        offsets=offsets,
        ids=order.astype(np.int32),
        data=np.ascontiguousarray(X[order]),
        seed=seed,
        layout=layout,
        d1=d1 if layout == "split" else 0,
    )
    if layout == "split":
        idx.a1, idx.a2 = _split(idx.data, d1)
    if raw is not None:
        raw = np.asarray(raw, dtype=np.float32)
        if raw.shape != X.shape:
            raise ValueError("raw and transformed datasets differ in shape")
        idx.raw = np.ascontiguousarray(raw[order])
        idx.raw_centroids = (
            raw_centroids_map(centroids) if raw_centroids_map is not None else centroids
        ).astype(np.float32)
        if layout == "split":
            idx.raw_a1, idx.raw_a2 = _split(idx.raw, d1)
    return idx


@njit(cache=True)
def _probe_order(centroids, q, n_probe):
    k = centroids.shape[0]
    d2 = np.empty(k)
    for c in range(k):
        d2[c] = kern.sq_dist(centroids[c], q)
    return np.argsort(d2, kind="mergesort")[:n_probe]


@njit(cache=True)
def _scan_contiguous(data, offsets, probes, q, topk, mode, delta_d, table, heap_keys, heap_ids):
    size = 0
    dims = 0
    ncand = 0
    for p in range(probes.shape[0]):
        c = probes[p]
        for j in range(offsets[c], offsets[c + 1]):
            r2 = heap_keys[0] if size == topk else np.inf
            pos, obs, used = kern.dco(mode, data[j], q, r2, delta_d, table)
            dims += used
            ncand += 1
            if pos:
                if size < topk:
                    size = H.max_push(heap_keys, heap_ids, size, obs, j)
                elif obs < heap_keys[0]:
                    H.max_replace_top(heap_keys, heap_ids, size, obs, j)
    return size, dims, ncand


@njit(cache=True)
def _scan_split(a1, a2, offsets, probes, q, topk, mode, delta_d, table, heap_keys, heap_ids):
    d1 = a1.shape[1]
    dim = d1 + a2.shape[1]
    n_ck = d1 // delta_d  # batch checkpoints answered from A1 alone
    total = 0
    for p in range(probes.shape[0]):
        c = probes[p]
        total += offsets[c + 1] - offsets[c]
    pre = np.empty((total, max(n_ck, 1)))
    tail = np.empty(total)

    # pass 1: the first d1 coordinates of every candidate, sequentially
    j = 0
    for p in range(probes.shape[0]):
        c = probes[p]
        for row in range(offsets[c], offsets[c + 1]):
            s = 0.0
            ck = 0
            nxt = delta_d
            for i in range(d1):
                t = np.float64(a1[row, i]) - np.float64(q[i])
                s += t * t
                if i + 1 == nxt:
                    pre[j, ck] = s
                    ck += 1
                    nxt += delta_d
            tail[j] = s
            j += 1

    # pass 2: decisions in candidate order, touching A2 only when needed
    size = 0
    dims = 0
    j = 0
    for p in range(probes.shape[0]):
        c = probes[p]
        for row in range(offsets[c], offsets[c + 1]):
            r2 = heap_keys[0] if size == topk else np.inf
            pos = False
            obs = 0.0
            used = 0
            decided = False
            for ck in range(n_ck):
                d = (ck + 1) * delta_d
                s = pre[j, ck]
                if mode == kern.AD:
                    if s > table[d] * r2:
                        pos, obs, used, decided = False, s * dim / d, d, True
                        break
                elif mode == kern.PD:
                    if s > r2:
                        pos, obs, used, decided = False, s, d, True
                        break
            if not decided:
                s = tail[j]
                d = n_ck * delta_d
                cur = d1
                while d < dim:
                    end = min(d + delta_d, dim)
                    for i in range(cur, end):
                        t = np.float64(a2[row, i - d1]) - np.float64(q[i])
                        s += t * t
                    cur = end
                    d = end
                    if d < dim:
                        if mode == kern.AD and s > table[d] * r2:
                            pos, obs, used, decided = False, s * dim / d, d, True
                            break
                        if mode == kern.PD and s > r2:
                            pos, obs, used, decided = False, s, d, True
                            break
                if not decided:
                    pos, obs, used = s <= r2, s, dim
            dims += used
            if pos:
                if size < topk:
                    size = H.max_push(heap_keys, heap_ids, size, obs, row)
                elif obs < heap_keys[0]:
                    H.max_replace_top(heap_keys, heap_ids, size, obs, row)
            j += 1
    return size, dims, total


@njit(cache=True)
def _rotate(m, q):
    return np.dot(m, q)


@njit(cache=True)
def _search_batch(Q, rotation, centroids, ids, offsets, data, a1, a2, split, n_probe, topk, mode, delta_d, table,
                  out_ids, out_d2, out_dims, out_ncand):
    heap_keys = np.empty(topk)
    heap_rows = np.empty(topk, dtype=np.int64)
    for qi in range(Q.shape[0]):
        q = _rotate(rotation, Q[qi]) if rotation.shape[0] > 0 else Q[qi]
        probes = _probe_order(centroids, q, n_probe)
        if split:
            size, dims, ncand = _scan_split(a1, a2, offsets, probes, q, topk, mode, delta_d, table, heap_keys, heap_rows)
        else:
            size, dims, ncand = _scan_contiguous(data, offsets, probes, q, topk, mode, delta_d, table, heap_keys, heap_rows)
        # insertion sort of the heap contents by (distance, id)
        for a in range(size):
            key = heap_keys[a]
            ident = ids[heap_rows[a]]
            b = a - 1
            while b >= 0 and (out_d2[qi, b] > key or (out_d2[qi, b] == key and out_ids[qi, b] > ident)):
                out_d2[qi, b + 1] = out_d2[qi, b]
                out_ids[qi, b + 1] = out_ids[qi, b]
                b -= 1
            out_d2[qi, b + 1] = key
            out_ids[qi, b + 1] = ident
        for a in range(size, topk):
            out_d2[qi, a] = np.inf
            out_ids[qi, a] = -1
        out_dims[qi] = dims
        out_ncand[qi] = ncand


_KERNEL_MODE = {"FD": kern.FD, "PD": kern.PD, "PD_SPLIT": kern.PD, "AD": kern.AD, "AD_SPLIT": kern.AD}


@dataclass
class BatchResult:
    """Padded per-query results: missing slots hold id ``-1`` and distance ``inf``."""

    ids: np.ndarray
    distances: np.ndarray
    dims: np.ndarray
    n_candidates: np.ndarray
    wall_time: float

    def __getitem__(self, i) -> KnnResult:
        keep = self.ids[i] >= 0
        return KnnResult(
            self.ids[i][keep], self.distances[i][keep], int(self.dims[i]), int(self.n_candidates[i]),
            self.wall_time / len(self.ids),
        )

    def __len__(self) -> int:
        return len(self.ids)


def ivf_search(
    idx: IvfIndex,
    queries,
    K: int,
    n_probe: int,
    mode: str = "AD",
    cfg: DcoConfig = DcoConfig(),
    rotation: np.ndarray | None = None,
) -> BatchResult:
    """Search a batch of queries in one compiled loop.

    ``queries`` must live in the space the mode scans: rotated for the AD
    modes, raw for the baselines (when the index keeps raw vectors). Passing
    ``rotation`` instead hands over raw queries that get rotated inside the
    loop, so the rotation is included in ``wall_time``.
    """
    mode = canonical_mode(mode)
    if not 1 <= n_probe <= idx.n_clusters:
        raise ValueError(f"n_probe must be in [1, {idx.n_clusters}], got {n_probe}")
    if K < 1:
        raise ValueError("K must be >= 1")
    dim = idx.dim
    if mode.startswith("AD"):
        cfg.check_dim(dim)
    Q = np.ascontiguousarray(queries, dtype=np.float32)
    if Q.ndim != 2 or Q.shape[1] != dim:
        raise ValueError(f"queries must have shape (m, {dim}), got {Q.shape}")
    if mode in ("FD", "PD", "PD_SPLIT") and idx.raw is not None:
        centroids, data, a1, a2 = idx.raw_centroids, idx.raw, idx.raw_a1, idx.raw_a2
        rotation = None
    else:
        centroids, data, a1, a2 = idx.centroids, idx.data, idx.a1, idx.a2
    split = mode.endswith("SPLIT")
    if split and a1 is None:
        raise ValueError(f"mode {mode} needs an index built with layout='split'")
    kmode = _KERNEL_MODE[mode]
    table = kern.ratio_table(dim, cfg.epsilon0) if kmode == kern.AD else np.zeros(dim + 1)
    empty = np.empty((0, dim), dtype=np.float32)
    # float32 keeps the matrix small enough to stay cache resident between queries
    rot = np.empty((0, 0), dtype=np.float32) if rotation is None else np.ascontiguousarray(rotation, dtype=np.float32)
    m = Q.shape[0]
    out_ids = np.empty((m, K), dtype=np.int64)
    out_d2 = np.empty((m, K))
    out_dims = np.empty(m, dtype=np.int64)
    out_ncand = np.empty(m, dtype=np.int64)
    t0 = time.perf_counter()
    _search_batch(
        Q, rot, centroids, idx.ids, idx.offsets,
        empty if split else data, a1 if split else empty, a2 if split else empty, split,
        n_probe, K, kmode, cfg.delta_d, table, out_ids, out_d2, out_dims, out_ncand,
    )
    elapsed = time.perf_counter() - t0
    return BatchResult(out_ids, np.sqrt(out_d2), out_dims, out_ncand, elapsed)


def ivf_query(
    idx: IvfIndex,
    q_transformed,
    K: int,
    n_probe: int,
    mode: str = "AD",
    cfg: DcoConfig = DcoConfig(),
    q_raw=None,
) -> KnnResult:
    """K nearest neighbours among the members of the ``n_probe`` closest buckets.

    ``q_transformed`` feeds the AD modes and ``q_raw`` the FD/PD modes; when
    the index holds no raw vectors, every mode runs on ``q_transformed``.
    """
    mode = canonical_mode(mode)
    q = q_transformed
    if mode in ("FD", "PD", "PD_SPLIT") and idx.raw is not None:
        if q_raw is None:
            raise ValueError(f"mode {mode} needs the raw query")
        q = q_raw
    q = np.asarray(q, dtype=np.float32)
    if q.shape != (idx.dim,):
        raise ValueError(f"query must have shape ({idx.dim},), got {q.shape}")
    return ivf_search(idx, q[None, :], K, n_probe, mode, cfg)[0]


def save_ivf(idx: IvfIndex, directory: os.PathLike) -> None:
    """Write the index as fvecs/ivecs arrays plus a ``meta.txt`` file."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(out / "centroids.fvecs", idx.centroids)
    write_ivecs(out / "ids.ivecs", idx.ids[None, :])
    write_ivecs(out / "offsets.ivecs", idx.offsets[None, :])
    write_fvecs(out / "data.fvecs", idx.data)
    if idx.raw is not None:
        write_fvecs(out / "raw.fvecs", idx.raw)
        write_fvecs(out / "raw_centroids.fvecs", idx.raw_centroids)
    if idx.layout == "split":
        write_fvecs(out / "a1.fvecs", idx.a1)
        write_fvecs(out / "a2.fvecs", idx.a2)
    meta = {
        "kind": "ivf",
        "n": idx.data.shape[0],
        "d": idx.dim,
        "k_clusters": idx.n_clusters,
        "layout": idx.layout,
        "d1": idx.d1,
        "seed": idx.seed,
        "has_raw": int(idx.raw is not None),
    }
    (out / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def read_meta(directory: os.PathLike) -> dict[str, str]:
    text = (Path(directory) / "meta.txt").read_text()
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def load_ivf(directory: os.PathLike) -> IvfIndex:
    src = Path(directory)
    meta = read_meta(src)
    if meta.get("kind") != "ivf":
        raise ValueError(f"{src} does not hold an IVF index")
    idx = IvfIndex(
        centroids=read_fvecs(src / "centroids.fvecs"),
        offsets=read_ivecs(src / "offsets.ivecs")[0].astype(np.int64),
        ids=read_ivecs(src / "ids.ivecs")[0],
        data=read_fvecs(src / "data.fvecs"),
        seed=int(meta["seed"]),
        layout=meta["layout"],
        d1=int(meta["d1"]),
    )
    if meta.get("has_raw") == "1":
        idx.raw = read_fvecs(src / "raw.fvecs")
        idx.raw_centroids = read_fvecs(src / "raw_centroids.fvecs")
        if idx.layout == "split":
            idx.raw_a1, idx.raw_a2 = _split(idx.raw, idx.d1)
    if idx.layout == "split":
        idx.a1 = read_fvecs(src / "a1.fvecs")
        idx.a2 = read_fvecs(src / "a2.fvecs")
    return idx


class IVFIndex(BaseEstimator):
    """IVF nearest-neighbour estimator.

    ``fit`` draws the random rotation, clusters the rotated data and keeps
    the raw vectors too so every mode can be queried on one index.
    ``kneighbors`` mirrors :meth:`sklearn.neighbors.NearestNeighbors.kneighbors`;
    the rotation of each query is part of its measured time.

    Parameters
    ----------
    n_clusters : int or None
        Number of buckets; ``None`` means ``ceil(sqrt(n))``.
    n_probe : int
        Buckets scanned per query.
    mode : str
        One of ``MODES`` or an algorithm label such as ``"IVF++"``.
    epsilon0, delta_d : ADSampling significance knob and batch size.
    layout : {"split", "contiguous"}
    d1 : int or None
        Width of the first split array; defaults to ``delta_d``.
    max_iter : int
        Lloyd iterations.
    random_state : int
        Seeds both the rotation and k-means.
    """

    def __init__(
        self,
        n_clusters=None,
        n_probe=16,
        mode="AD_SPLIT",
        epsilon0=DEFAULT_EPSILON0,
        delta_d=DEFAULT_DELTA_D,
        layout="split",
        d1=None,
        max_iter=25,
        random_state=42,
    ):
        self.n_clusters = n_clusters
        self.n_probe = n_probe
        self.mode = mode
        self.epsilon0 = epsilon0
        self.delta_d = delta_d
        self.layout = layout
        self.d1 = d1
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float32)
        self.rotation_ = RandomOrthogonalTransform(self.random_state).fit(X)
        Y = self.rotation_.transform(X)
        m = self.rotation_.matrix_
        self.index_ = build_ivf(
            Y,
            self.n_clusters,
            seed=self.random_state,
            layout=self.layout,
            d1=self.d1 if self.d1 is not None else self.delta_d,
            raw=X,
            raw_centroids_map=lambda c: apply_dataset(m.T, c),
            max_iters=self.max_iter,
        )
        return self

    @classmethod
    def from_index(cls, index: IvfIndex, **params) -> "IVFIndex":
        """Wrap a loaded :class:`IvfIndex`; the rotation is regenerated from its seed."""
        est = cls(random_state=index.seed, layout=index.layout, d1=index.d1 or None, **params)
        est.rotation_ = RandomOrthogonalTransform(index.seed)
        est.rotation_.matrix_ = generate_orthogonal(index.dim, index.seed)
        est.rotation_.n_features_in_ = index.dim
        est.n_features_in_ = index.dim
        est.index_ = index
        return est

    def query(self, q, n_neighbors=10, n_probe=None, mode=None) -> KnnResult:
        """Single-query search returning a :class:`KnnResult` with its counters."""
        check_is_fitted(self, "index_")
        q = np.asarray(q, dtype=np.float32)
        return self.search(q[None, :], n_neighbors, n_probe, mode)[0]

    def search(self, X, n_neighbors=10, n_probe=None, mode=None) -> BatchResult:
        """Batch search of raw queries; AD modes rotate each query inside the timed loop."""
        check_is_fitted(self, "index_")
        mode = canonical_mode(mode or self.mode)
        n_probe = self.n_probe if n_probe is None else n_probe
        cfg = DcoConfig(self.epsilon0, self.delta_d)
        return ivf_search(self.index_, X, n_neighbors, n_probe, mode, cfg, rotation=self.rotation_.matrix_.entries)

    def kneighbors(self, X, n_neighbors=10, return_distance=True, n_probe=None, mode=None):
        check_is_fitted(self, "index_")
        X = validate_data(self, X, reset=False, dtype=np.float32)
        res = self.search(X, n_neighbors, n_probe, mode)
        self.last_result_ = res
        return (res.distances, res.ids) if return_distance else res.ids
