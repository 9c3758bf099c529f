"""Random orthogonal transforms.

A :class:`TransformMatrix` is a ``D x D`` orthogonal matrix obtained by
orthonormalizing the rows of an i.i.d. standard normal matrix. Rotating both
data and query vectors with it preserves every Euclidean distance, while any
prefix of ``d`` coordinates of the rotated difference vector behaves like a
``d``-dimensional random projection of it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .vecio import read_fvecs, write_fvecs

__all__ = [
    "TransformMatrix",
    "generate_orthogonal",
    "apply",
    "apply_dataset",
    "save_matrix",
    "load_matrix",
    "RandomOrthogonalTransform",
]


@dataclass(frozen=True, eq=False)
class TransformMatrix:
    dim: int
    seed: int
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def T(self) -> "TransformMatrix":
        return TransformMatrix(self.dim, self.seed, np.ascontiguousarray(self.entries.T))

    def orthogonality_error(self) -> float:
        """Largest entrywise deviation of ``P P^T`` from the identity."""
        return float(np.abs(self.entries @ self.entries.T - np.eye(self.dim)).max())


def _standard_normals(n: int, seed: int) -> np.ndarray:
    # Box-Muller over uniforms from the counter-based Philox stream.
    gen = np.random.Generator(np.random.Philox(seed))
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1]
    u2 = gen.random(m)
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:n]


@njit(cache=True)
def _mgs_rows(a):
    # Modified Gram-Schmidt on the rows, each row orthogonalized twice.
    n = a.shape[0]
    for i in range(n):
        for _ in range(2):
            for j in range(i):
                dot = 0.0
                for k in range(n):
                    dot += a[i, k] * a[j, k]
                for k in range(n):
                    a[i, k] -= dot * a[j, k]
        nrm = 0.0
        for k in range(n):
            nrm += a[i, k] * a[i, k]
        nrm = np.sqrt(nrm)
        for k in range(n):
            a[i, k] /= nrm
    return a


def generate_orthogonal(dim: int, seed: int = 42) -> TransformMatrix:
    """Random orthogonal ``dim x dim`` matrix, a pure function of ``(dim, seed)``."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    g = _standard_normals(dim * dim, int(seed)).reshape(dim, dim)
    return TransformMatrix(dim, int(seed), _mgs_rows(g))


def apply(m: TransformMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.dim,):
        raise ValueError(f"expected a vector of length {m.dim}, got shape {x.shape}")
    return (m.entries @ x).astype(np.float32)


def apply_dataset(m: TransformMatrix, X) -> np.ndarray:
    """Rotate every row of ``X``; the result is float32."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != m.dim:
        raise ValueError(f"expected shape (n, {m.dim}), got {X.shape}")
    out = np.empty(X.shape, dtype=np.float32)
    # chunked to bound the float64 temporaries
    step = max(1, (1 << 22) // max(m.dim, 1))
    for s in range(0, X.shape[0], step):
        out[s : s + step] = X[s : s + step].astype(np.float64) @ m.entries.T
    return out


def save_matrix(path: os.PathLike, m: TransformMatrix) -> None:
    """Persist as an fvecs file of ``D`` rows (float32 precision)."""
    write_fvecs(path, m.entries)


def load_matrix(path: os.PathLike, seed: int = -1) -> TransformMatrix:
    entries = read_fvecs(path).astype(np.float64)
    if entries.shape[0] != entries.shape[1]:
        raise ValueError(f"{path}: matrix is {entries.shape}, expected square")
    return TransformMatrix(entries.shape[0], seed, entries)


class RandomOrthogonalTransform(TransformerMixin, BaseEstimator):
    """Rotate vectors by a seeded random orthogonal matrix.

    Parameters
    ----------
    random_state : int, default=42
        Seed of the generating matrix.

    Attributes
    ----------
    matrix_ : TransformMatrix
    n_features_in_ : int
    """

    def __init__(self, random_state: int = 42):
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=[np.float32, np.float64])
        self.matrix_ = generate_orthogonal(X.shape[1], self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "matrix_")
        X = validate_data(self, X, reset=False, dtype=[np.float32, np.float64])
        return apply_dataset(self.matrix_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "matrix_")
        X = validate_data(self, X, reset=False, dtype=[np.float32, np.float64])
        return apply_dataset(self.matrix_.T, X)
