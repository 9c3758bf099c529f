"""Compiled DCO kernels shared by the single-shot API and the indexes.

Every kernel works on squared distances accumulated in float64 and returns
``(positive, observed_sq, dims)``. ``observed_sq`` is the squared exact
distance when all dimensions were scanned and the squared estimate
``S_d * D / d`` when ADSampling stopped early.
"""

import numpy as np
from numba import njit

FD = 0
PD = 1
AD = 2


def ratio_table(dim: int, epsilon0: float) -> np.ndarray:
    """``table[d] = (1 + eps/sqrt(d))^2 * d / D`` so the test reads ``S_d > table[d] * r^2``."""
    d = np.arange(dim + 1, dtype=np.float64)
    table = np.zeros(dim + 1)
    table[1:] = (1.0 + epsilon0 / np.sqrt(d[1:])) ** 2 * d[1:] / dim
    return table


@njit(cache=True, inline="always")
def fd_dco(o, q, r2):
    s = 0.0
    for i in range(o.shape[0]):
        t = np.float64(o[i]) - np.float64(q[i])
        s += t * t
    return s <= r2, s, o.shape[0]


# A single flat loop with a checkpoint every ``delta_d`` dimensions is
# noticeably faster in numba than nested batch loops.
@njit(cache=True, inline="always")
def pd_dco(o, q, r2, delta_d):
    dim = o.shape[0]
    s = 0.0
    nxt = min(delta_d, dim)
    i = 0
    while True:
        t = np.float64(o[i]) - np.float64(q[i])
        s += t * t
        i += 1
        if i == nxt:
            if i >= dim:
                break
            if s > r2:
                return False, s, i
            nxt = min(i + delta_d, dim)
    return s <= r2, s, dim


@njit(cache=True, inline="always")
def ad_dco(o, q, r2, delta_d, table):
    dim = o.shape[0]
    s = 0.0
    nxt = min(delta_d, dim)
    i = 0
    while True:
        t = np.float64(o[i]) - np.float64(q[i])
        s += t * t
        i += 1
        if i == nxt:
            if i >= dim:
                break
            if s > table[i] * r2:
                return False, s * dim / i, i
            nxt = min(i + delta_d, dim)
    return s <= r2, s, dim


@njit(cache=True, inline="always")
def dco(mode, o, q, r2, delta_d, table):
    if mode == AD:
        return ad_dco(o, q, r2, delta_d, table)
    if mode == PD:
        return pd_dco(o, q, r2, delta_d)
    return fd_dco(o, q, r2)


@njit(cache=True)
def dco_single(mode, o, q, r2, delta_d, table):
    return dco(mode, o, q, r2, delta_d, table)


@njit(cache=True)
def sq_dist(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        t = np.float64(a[i]) - np.float64(b[i])
        s += t * t
    return s

