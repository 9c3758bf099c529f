"""Distance comparison operations (DCOs).

A DCO answers "is ``dist(o, q) <= r``?" and, when the answer is yes, also
returns the exact distance. Three strategies are provided:

* :func:`fd_scan` scans every dimension.
* :func:`pd_scan` stops once the running partial distance exceeds ``r``.
* :func:`ad_sampling` works on randomly rotated vectors and stops as soon as
  the distance estimated from the dimensions seen so far exceeds
  ``(1 + epsilon0 / sqrt(d)) * r``.

Negative answers from ADSampling are always correct; positive answers can be
missed with a probability controlled by ``epsilon0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels as K

__all__ = [
    "DcoConfig",
    "DcoOutcome",
    "DcoQuery",
    "threshold_multiplier",
    "fd_scan",
    "pd_scan",
    "ad_sampling",
    "reduce_inner_product",
    "reduce_cosine",
    "inner_product_dco",
]

DEFAULT_EPSILON0 = 2.1
DEFAULT_DELTA_D = 32


@dataclass(frozen=True)
class DcoConfig:
    epsilon0: float = DEFAULT_EPSILON0
    delta_d: int = DEFAULT_DELTA_D

    def __post_init__(self):
        if not self.epsilon0 > 0:
            raise ValueError(f"epsilon0 must be positive, got {self.epsilon0}")
        if self.delta_d < 1:
            raise ValueError(f"delta_d must be >= 1, got {self.delta_d}")

    def check_dim(self, dim: int) -> None:
        if self.delta_d > dim:
            raise ValueError(f"delta_d={self.delta_d} exceeds dimensionality {dim}")


@dataclass(frozen=True)
class DcoOutcome:
    positive: bool
    observed: float
    dims_used: int

    @property
    def distance(self) -> float | None:
        """Exact distance for positive outcomes, ``None`` otherwise."""
        return self.observed if self.positive else None


class DcoQuery(NamedTuple):
    data_vec: np.ndarray
    query_vec: np.ndarray
    r: float


def threshold_multiplier(d: int, cfg: DcoConfig) -> float:
    """Rejection factor ``1 + epsilon0 / sqrt(d)`` after ``d`` sampled dimensions."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return 1.0 + cfg.epsilon0 / math.sqrt(d)


def _prepare(o, q, r):
    o = np.ascontiguousarray(o)
    q = np.ascontiguousarray(q)
    if o.ndim != 1 or o.shape != q.shape:
        raise ValueError(f"vectors must be 1-d with equal length, got {o.shape} and {q.shape}")
    if o.dtype != q.dtype:
        dt = np.result_type(o, q)
        o, q = o.astype(dt), q.astype(dt)
    if not (r >= 0):
        raise ValueError(f"r must be non-negative, got {r}")
    return o, q, float(r) * float(r)


def _outcome(res) -> DcoOutcome:
    positive, observed_sq, dims = res
    return DcoOutcome(bool(positive), math.sqrt(observed_sq), int(dims))


_EMPTY_TABLE = np.zeros(1)


def fd_scan(o, q, r: float) -> DcoOutcome:
    """Exact DCO over all dimensions. Positive iff ``dist <= r``."""
    o, q, r2 = _prepare(o, q, r)
    return _outcome(K.dco_single(K.FD, o, q, r2, 1, _EMPTY_TABLE))


def pd_scan(o, q, r: float, delta_d: int = DEFAULT_DELTA_D) -> DcoOutcome:
    """Exact DCO that stops once the partial distance over ``delta_d``-sized batches exceeds ``r``."""
    o, q, r2 = _prepare(o, q, r)
    if delta_d < 1:
        raise ValueError("delta_d must be >= 1")
    return _outcome(K.dco_single(K.PD, o, q, r2, int(delta_d), _EMPTY_TABLE))


def ad_sampling(o, q, r: float, cfg: DcoConfig = DcoConfig()) -> DcoOutcome:
    """ADSampling DCO.

    ``o`` and ``q`` must already be rotated by the same random orthogonal
    matrix; this is not (and cannot be) checked. When the outcome is
    negative and ``dims_used < D``, ``observed`` is the estimate
    ``sqrt(D / d * S_d)`` at the moment of rejection.
    """
    o, q, r2 = _prepare(o, q, r)
    cfg.check_dim(o.shape[0])
    table = K.ratio_table(o.shape[0], cfg.epsilon0)
    return _outcome(K.dco_single(K.AD, o, q, r2, cfg.delta_d, table))


def _norm(v) -> tuple[np.ndarray, float]:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("zero-norm vector")
    return v, n


def reduce_inner_product(o, q, r: float) -> DcoQuery | None:
    """Turn ``<o, q> >= r`` into a Euclidean DCO over normalized vectors.

    Returns ``None`` when ``r > |o| |q|``: no vector pair can satisfy the
    predicate, so the answer is negative without any scan.
    """
    o, no = _norm(o)
    q, nq = _norm(q)
    rhs = 2.0 - 2.0 * r / (no * nq)
    if rhs < 0:
        return None
    return DcoQuery(o / no, q / nq, math.sqrt(rhs))


def reduce_cosine(o, q) -> DcoQuery:
    """Normalized pair whose Euclidean distance ranks like descending cosine similarity.

    The radius is left at ``inf``; callers set their own threshold.
    """
    o, no = _norm(o)
    q, nq = _norm(q)
    return DcoQuery(o / no, q / nq, math.inf)


def inner_product_dco(o, q, r: float) -> bool:
    dq = reduce_inner_product(o, q, r)
    if dq is None:
        return False
    return fd_scan(*dq).positive
