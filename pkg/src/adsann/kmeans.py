"""Lloyd's k-means with greedy k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.cluster import kmeans_plusplus

__all__ = ["KMeansResult", "kmeans", "assign_nearest"]


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, d) float64
    labels: np.ndarray  # (n,) int64
    objective: list[float]  # after each assignment step
    n_iter: int


@njit(cache=True)
def _assign_exact(X, C, labels, dist2):
    # direct differences in float64; strict < keeps the lowest index on ties
    n, d = X.shape
    k = C.shape[0]
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                v = np.float64(X[i, t]) - C[j, t]
                s += v * v
            if s < best:
                best = s
                arg = j
        labels[i] = arg
        dist2[i] = best


def assign_nearest(X: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties -> lowest index) and its squared distance."""
    labels = np.empty(X.shape[0], dtype=np.int64)
    dist2 = np.empty(X.shape[0])
    _assign_exact(np.ascontiguousarray(X), np.ascontiguousarray(centroids, dtype=np.float64), labels, dist2)
    return labels, dist2


def _assign_blas(X64, sqx, C, chunk=8192):
    sqc = (C**2).sum(1)
    labels = np.empty(X64.shape[0], dtype=np.int64)
    for s in range(0, X64.shape[0], chunk):
        d2 = sqx[s : s + chunk, None] - 2.0 * X64[s : s + chunk] @ C.T + sqc[None, :]
        labels[s : s + chunk] = np.argmin(d2, axis=1)
    return labels


def kmeans(X, k: int, max_iters: int = 25, seed: int = 42, tol: float = 1e-4) -> KMeansResult:
    """Cluster the rows of ``X`` into ``k`` groups.

    Empty clusters are re-seeded at the point currently farthest from its
    centroid. Iteration stops after ``max_iters`` Lloyd steps or when the
    relative objective change drops below ``tol``.
    """
    X = np.asarray(X)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    X64 = X.astype(np.float64)
    sqx = (X64**2).sum(1)
    # greedy k-means++ (several candidates per step) avoids most merged-blob starts
    centroids, _ = kmeans_plusplus(X64, k, x_squared_norms=sqx, random_state=int(rng.integers(2**31 - 1)))

    objective: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iters + 1):
        labels = _assign_blas(X64, sqx, centroids)
        d2 = ((X64 - centroids[labels]) ** 2).sum(1)
        objective.append(float(d2.sum()))
        if len(objective) > 1:
            prev = objective[-2]
            if prev == 0 or abs(prev - objective[-1]) / prev < tol:
                break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X64)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for c in np.flatnonzero(~nonempty):
            far = int(np.argmax(d2))
            centroids[c] = X64[far]
            d2[far] = 0.0
    return KMeansResult(centroids, labels, objective, it)
