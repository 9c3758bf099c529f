"""fvecs / ivecs I/O, dataset descriptors and synthetic blob data.

Both formats store one record per vector: a little-endian int32 dimension
followed by that many little-endian float32 (fvecs) or int32 (ivecs) values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "DatasetDescriptor",
    "read_fvecs",
    "write_fvecs",
    "read_ivecs",
    "write_ivecs",
    "read_descriptor",
    "write_descriptor",
    "synth_dataset",
]


class FormatError(ValueError):
    """Raised when a vecs file is malformed."""


def _read_vecs(path: os.PathLike, dtype: np.dtype) -> np.ndarray:
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        raise FormatError(f"{path}: empty file")
    d = int(raw[0])
    if d <= 0:
        raise FormatError(f"{path}: non-positive dimension {d}")
    if raw.size % (d + 1):
        raise FormatError(f"{path}: truncated record (file size not a multiple of {4 * (d + 1)} bytes)")
    rows = raw.reshape(-1, d + 1)
    bad = np.flatnonzero(rows[:, 0] != d)
    if bad.size:
        raise FormatError(f"{path}: record {bad[0]} has dimension {rows[bad[0], 0]}, expected {d}")
    return np.ascontiguousarray(rows[:, 1:]).view(dtype)


def _write_vecs(path: os.PathLike, x: np.ndarray, dtype: str) -> None:
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise FormatError(f"expected a non-empty 2-d array, got shape {x.shape}")
    n, d = x.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = np.ascontiguousarray(x, dtype=dtype).view("<i4")
    out.tofile(path)


def read_fvecs(path: os.PathLike) -> np.ndarray:
    """Read an fvecs file into an ``(n, d)`` float32 array."""
    x = _read_vecs(path, np.dtype("<f4"))
    if not np.isfinite(x).all():
        raise FormatError(f"{path}: non-finite values")
    return x.astype(np.float32, copy=False)


def write_fvecs(path: os.PathLike, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.size and not np.isfinite(x).all():
        raise FormatError("refusing to write non-finite values")
    _write_vecs(path, x, "<f4")


def read_ivecs(path: os.PathLike) -> np.ndarray:
    """Read an ivecs file into an ``(n, d)`` int32 array."""
    return _read_vecs(path, np.dtype("<i4")).astype(np.int32, copy=False)


def write_ivecs(path: os.PathLike, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.size and not np.issubdtype(x.dtype, np.integer):
        raise FormatError(f"ivecs needs integer data, got {x.dtype}")
    if x.size and (x.min() < np.iinfo(np.int32).min or x.max() > np.iinfo(np.int32).max):
        raise FormatError("values overflow int32")
    _write_vecs(path, x, "<i4")


@dataclass(frozen=True)
class DatasetDescriptor:
    """Locations of a base / query / ground-truth triple.

    Stored on disk as ``key=value`` lines. Relative paths are resolved
    against the descriptor's own directory.
    """

    name: str
    base_path: Path
    query_path: Path
    gt_path: Path | None
    d: int

    def load(self) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        base = read_fvecs(self.base_path)
        queries = read_fvecs(self.query_path)
        for label, arr in (("base", base), ("query", queries)):
            if arr.shape[1] != self.d:
                raise FormatError(f"{self.name}: {label} has d={arr.shape[1]}, descriptor says {self.d}")
        gt = read_ivecs(self.gt_path) if self.gt_path is not None else None
        return base, queries, gt


def read_descriptor(path: os.PathLike) -> DatasetDescriptor:
    path = Path(path)
    fields: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        fields[key.strip()] = value.strip()
    missing = {"name", "base_path", "query_path", "d"} - fields.keys()
    if missing:
        raise FormatError(f"{path}: missing keys {sorted(missing)}")

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else path.parent / q

    gt = fields.get("gt_path")
    return DatasetDescriptor(
        name=fields["name"],
        base_path=resolve(fields["base_path"]),
        query_path=resolve(fields["query_path"]),
        gt_path=resolve(gt) if gt else None,
        d=int(fields["d"]),
    )


def write_descriptor(path: os.PathLike, desc: DatasetDescriptor) -> None:
    lines = [
        f"name={desc.name}",
        f"base_path={desc.base_path}",
        f"query_path={desc.query_path}",
    ]
    if desc.gt_path is not None:
        lines.append(f"gt_path={desc.gt_path}")
    lines.append(f"d={desc.d}")
    Path(path).write_text("\n".join(lines) + "\n")


def synth_dataset(
    n: int,
    d: int,
    n_blobs: int,
    spread: float,
    seed: int,
    *,
    decay: float = 0.0,
    return_centers: bool = False,
):
    """Gaussian blobs around well separated centers.

    ``spread`` is the RMS radius of a blob: the noise added to a center has
    per-axis variances proportional to ``(i + 1) ** -decay`` (isotropic for
    ``decay=0``) scaled so that ``E|noise|^2 = spread^2``. The noise axes are
    randomly rotated per dataset, so a decaying spectrum is not aligned with
    the coordinate axes. Centers are drawn i.i.d. normal and redrawn until
    every pair is at least ``10 * spread`` apart. Points are assigned to
    blobs round-robin, so blob sizes differ by at most one.

    Returns ``X`` of shape ``(n, d)`` in float32, plus the float64 centers
    when ``return_centers`` is set.
    """
    if n < 1 or d < 1 or n_blobs < 1:
        raise ValueError("n, d and n_blobs must all be >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    min_sep = 10.0 * spread
    # expected pairwise distance of N(0, s^2 I_d) centers is s * sqrt(2d)
    scale = 2.0 * max(min_sep, 1.0) / np.sqrt(2.0 * d)
    centers = rng.normal(0.0, scale, size=(n_blobs, d))
    if n_blobs > 1 and min_sep > 0:
        for _ in range(10000):
            sq = (centers**2).sum(1)
            dist2 = sq[:, None] + sq[None, :] - 2.0 * centers @ centers.T
            np.fill_diagonal(dist2, np.inf)
            i, j = np.unravel_index(np.argmin(dist2), dist2.shape)
            if dist2[i, j] >= min_sep**2:
                break
            centers[i] = rng.normal(0.0, scale, size=d)
        else:
            raise RuntimeError("could not place separated blob centers")
    labels = np.arange(n) % n_blobs
    x = centers[labels]
    if spread > 0:
        var = (np.arange(1, d + 1, dtype=np.float64)) ** -float(decay)
        std = spread * np.sqrt(var / var.sum())
        noise = rng.normal(0.0, 1.0, size=(n, d)) * std
        if decay:
            basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
            noise = noise @ basis.T
        x = x + noise
    x = x.astype(np.float32)
    if return_centers:
        return x, centers
    return x
