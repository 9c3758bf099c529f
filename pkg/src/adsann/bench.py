"""Ground truth, accuracy metrics, benchmark sweeps and the fixed-threshold study."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from . import _kernels as kern
from .dco import DcoConfig
from .hnsw import HNSWIndex
from .hnsw import LABELS as HNSW_LABELS
from .hnsw import canonical_mode as hnsw_mode
from .ivf import LABELS as IVF_LABELS
from .ivf import IVFIndex, IvfIndex, ivf_search
from .ivf import canonical_mode as ivf_mode
from .transform import apply_dataset, generate_orthogonal

__all__ = [
    "BenchRecord",
    "brute_force_knn",
    "recall",
    "avg_distance_ratio",
    "evaluate",
    "run_sweep",
    "write_csv",
    "read_csv",
    "TheoryRow",
    "verify_theory",
    "linear_scan",
]

CSV_COLUMNS = ("algo", "param", "qps", "recall", "avg_ratio", "avg_dims", "dims_pct")


@dataclass
class BenchRecord:
    algo: str
    param: float
    qps: float
    recall: float
    avg_ratio: float
    avg_dims: float
    dims_pct: float


@njit(cache=True)
def _dist_rows(X, Q, out):
    for i in range(Q.shape[0]):
        for j in range(X.shape[0]):
            out[i, j] = kern.sq_dist(X[j], Q[i])


def brute_force_knn(X, Q, K: int, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Exact K nearest neighbours of every query.

    Squared distances are accumulated in float64 over float32 inputs; ties
    are broken by ascending id. Returns ``(ids, distances)`` with shapes
    ``(m, K)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float32)
    Q = np.ascontiguousarray(Q, dtype=np.float32)
    if X.ndim != 2 or Q.ndim != 2 or X.shape[1] != Q.shape[1]:
        raise ValueError(f"dimension mismatch: base {X.shape}, queries {Q.shape}")
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    m = Q.shape[0]
    ids = np.empty((m, K), dtype=np.int32)
    dist = np.empty((m, K))
    buf = np.empty((min(chunk, m), n))
    for s in range(0, m, chunk):
        block = buf[: min(chunk, m - s)]
        _dist_rows(X, Q[s : s + chunk], block)
        for r, row in enumerate(block):
            kth = np.partition(row, K - 1)[K - 1]
            cand = np.flatnonzero(row <= kth)
            order = np.lexsort((cand, row[cand]))[:K]
            ids[s + r] = cand[order]
            dist[s + r] = np.sqrt(row[cand[order]])
    return ids, dist


def recall(result_ids, gt_ids, K: int) -> float:
    """``|result ∩ gt[:K]| / K``; padding ids (``-1``) never match."""
    if len(gt_ids) < K:
        raise ValueError("ground truth shorter than K")
    truth = {int(i) for i in gt_ids[:K]}
    found = {int(i) for i in result_ids if i >= 0}
    return len(found & truth) / K


def avg_distance_ratio(result_dist, gt_dist, K: int) -> float:
    """Mean of ``result[i] / gt[i]`` over the first ``K`` slots.

    A slot whose true distance is zero counts as 1 when the returned
    distance is zero too; otherwise the ratio is undefined and ``nan`` is
    returned so the caller can exclude (and count) the query.
    """
    r = np.asarray(result_dist, dtype=np.float64)[:K]
    g = np.asarray(gt_dist, dtype=np.float64)[:K]
    if len(r) < K or len(g) < K:
        raise ValueError("need at least K result and ground-truth distances")
    zero = g == 0
    if np.any(zero & (r != 0)):
        return math.nan
    terms = np.ones(K)
    terms[~zero] = r[~zero] / g[~zero]
    return float(terms.mean())


def evaluate(ids, dists, gt_ids, gt_dists, K: int) -> tuple[float, float, int]:
    """Mean recall, mean ratio over non-flagged queries, and the number flagged."""
    recalls = [recall(a, b, K) for a, b in zip(ids, gt_ids)]
    ratios = np.array([avg_distance_ratio(a, b, K) for a, b in zip(dists, gt_dists)])
    flagged = int(np.isnan(ratios).sum())
    ratio = float(np.nanmean(ratios)) if flagged < len(ratios) else math.nan
    return float(np.mean(recalls)), ratio, flagged


def _label(est, mode: str) -> str:
    if isinstance(est, IVFIndex):
        return IVF_LABELS[ivf_mode(mode)]
    return HNSW_LABELS[hnsw_mode(mode)]


def _baseline(est) -> str:
    return "FD" if isinstance(est, IVFIndex) else "PLAIN"


def run_sweep(
    est,
    queries,
    gt_ids,
    gt_dists,
    modes: Sequence[str],
    params: Iterable[int],
    K: int = 10,
    repeats: int = 3,
) -> list[BenchRecord]:
    """One record per (mode, parameter) on a fitted :class:`IVFIndex` or :class:`HNSWIndex`.

    The parameter is ``n_probe`` for IVF and ``N_ef`` for HNSW. QPS is the
    median over ``repeats`` passes of the whole query set, single-threaded,
    with the rotation of each query inside the timed loop. ``dims_pct`` is
    relative to the full-scan mode at the same parameter.
    """
    Q = np.ascontiguousarray(queries, dtype=np.float32)
    is_ivf = isinstance(est, IVFIndex)
    if not is_ivf and not isinstance(est, HNSWIndex):
        raise TypeError(f"unsupported estimator {type(est).__name__}")
    canon = ivf_mode if is_ivf else hnsw_mode
    modes = [canon(m) for m in modes]
    base_mode = _baseline(est)
    run_modes = modes if base_mode in modes else [base_mode, *modes]
    records = []
    for p in params:
        p = int(p)
        kw = {"n_probe": p} if is_ivf else {"ef": max(p, K)}
        # interleave the repetitions so slow drift of the machine hits every mode alike
        times = {mode: [] for mode in run_modes}
        results = {}
        for mode in run_modes:
            est.search(Q[:1], K, mode=mode, **kw)  # warm-up
        for _ in range(max(1, repeats)):
            for mode in run_modes:
                res = est.search(Q, K, mode=mode, **kw)
                times[mode].append(res.wall_time)
                results[mode] = res
        base_dims = float(results[base_mode].dims.mean())
        for mode in modes:
            res = results[mode]
            avg_dims = float(res.dims.mean())
            rec, ratio, _ = evaluate(res.ids, res.distances, gt_ids, gt_dists, K)
            records.append(
                BenchRecord(
                    algo=_label(est, mode),
                    param=p,
                    qps=len(Q) / float(np.median(times[mode])),
                    recall=rec,
                    avg_ratio=ratio,
                    avg_dims=avg_dims,
                    dims_pct=100.0 * avg_dims / base_dims,
                )
            )
    return records


def write_csv(records: Iterable[BenchRecord], path: os.PathLike | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(
            [r.algo, f"{r.param:g}", f"{r.qps:.1f}", f"{r.recall:.6f}", f"{r.avg_ratio:.6f}", f"{r.avg_dims:.2f}", f"{r.dims_pct:.2f}"]
        )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_csv(path: os.PathLike) -> list[BenchRecord]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [BenchRecord(**{k: (v if k == "algo" else float(v)) for k, v in row.items()}) for row in rows]


# --- fixed-threshold verification ---------------------------------------


@dataclass
class TheoryRow:
    epsilon0: float
    failure_rate: float
    avg_dims: float
    positives: int
    dcos: int


@njit(cache=True)
def _fixed_threshold(data, queries, K, delta_d, table):
    n = data.shape[0]
    row = np.empty(n)
    fails = 0
    positives = 0
    dims = 0
    for qi in range(queries.shape[0]):
        q = queries[qi]
        for j in range(n):
            row[j] = kern.sq_dist(data[j], q)
        r2 = np.sort(row)[K - 1]
        for j in range(n):
            pos, _, used = kern.ad_dco(data[j], q, r2, delta_d, table)
            dims += used
            if row[j] <= r2:
                positives += 1
                if not pos:
                    fails += 1
    return fails, positives, dims


def verify_theory(X, Q, K: int, eps_grid: Sequence[float], seed: int = 42, delta_d: int = 1) -> list[TheoryRow]:
    """Independent ADSampling DCOs of every (query, object) pair.

    The radius of each query is fixed to the exact distance of its K-th
    nearest neighbour, so no DCO depends on an earlier one. The exact
    distances are computed on the rotated vectors with the same sequential
    float64 accumulation as a full scan, so objects at the boundary are
    classified consistently.
    """
    X = np.asarray(X, dtype=np.float32)
    Q = np.asarray(Q, dtype=np.float32)
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K must be in [1, {X.shape[0]}]")
    m = generate_orthogonal(X.shape[1], seed)
    Y = apply_dataset(m, X)
    QY = apply_dataset(m, Q)
    rows = []
    for eps in eps_grid:
        cfg = DcoConfig(float(eps), delta_d)
        cfg.check_dim(X.shape[1])
        fails, positives, dims = _fixed_threshold(Y, QY, K, delta_d, kern.ratio_table(X.shape[1], cfg.epsilon0))
        n_dco = X.shape[0] * Q.shape[0]
        rows.append(TheoryRow(float(eps), fails / positives, dims / n_dco, int(positives), int(n_dco)))
    return rows


def linear_scan(X, Q, K: int, mode: str = "AD", cfg: DcoConfig = DcoConfig(), seed: int = 42):
    """Exhaustive scan with a KNN set and the chosen DCO (one bucket holding everything).

    Returns the :class:`~adsann.ivf.BatchResult`; AD modes rotate data and
    queries with the seeded matrix first.
    """
    X = np.ascontiguousarray(X, dtype=np.float32)
    Q = np.ascontiguousarray(Q, dtype=np.float32)
    mode = ivf_mode(mode)
    if mode.startswith("AD"):
        m = generate_orthogonal(X.shape[1], seed)
        X = apply_dataset(m, X)
        Q = apply_dataset(m, Q)
    idx = IvfIndex(
        centroids=X.mean(0, keepdims=True).astype(np.float32),
        offsets=np.array([0, X.shape[0]], dtype=np.int64),
        ids=np.arange(X.shape[0], dtype=np.int32),
        data=X,
        seed=seed,
    )
    if mode.endswith("SPLIT"):
        d1 = cfg.delta_d
        idx.layout, idx.d1 = "split", d1
        idx.a1, idx.a2 = np.ascontiguousarray(X[:, :d1]), np.ascontiguousarray(X[:, d1:])
    return ivf_search(idx, Q, K, 1, mode, cfg)
