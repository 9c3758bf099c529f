"""Adaptive distance comparison operations for approximate nearest neighbour search.

The package provides randomized ADSampling DCOs and plugs them into an IVF
index and an HNSW graph, next to exact full-scan and partial-scan baselines.
"""

from .bench import BenchRecord, brute_force_knn, evaluate, run_sweep, verify_theory
from .dco import DcoConfig, DcoOutcome, ad_sampling, fd_scan, pd_scan, reduce_cosine, reduce_inner_product
from .hnsw import HNSWIndex, HnswGraph, build_hnsw, hnsw_query, hnsw_search, load_hnsw, save_hnsw
from .ivf import IVFIndex, IvfIndex, KnnResult, build_ivf, ivf_query, ivf_search, load_ivf, save_ivf
from .kmeans import kmeans
from .transform import RandomOrthogonalTransform, TransformMatrix, apply, generate_orthogonal
from .vecio import FormatError, read_fvecs, read_ivecs, synth_dataset, write_fvecs, write_ivecs

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "DcoConfig",
    "DcoOutcome",
    "FormatError",
    "HNSWIndex",
    "HnswGraph",
    "IVFIndex",
    "IvfIndex",
    "KnnResult",
    "RandomOrthogonalTransform",
    "TransformMatrix",
    "ad_sampling",
    "apply",
    "brute_force_knn",
    "build_hnsw",
    "build_ivf",
    "evaluate",
    "fd_scan",
    "generate_orthogonal",
    "hnsw_query",
    "hnsw_search",
    "ivf_query",
    "ivf_search",
    "kmeans",
    "load_hnsw",
    "load_ivf",
    "pd_scan",
    "read_fvecs",
    "read_ivecs",
    "reduce_cosine",
    "reduce_inner_product",
    "run_sweep",
    "save_hnsw",
    "save_ivf",
    "synth_dataset",
    "verify_theory",
    "write_fvecs",
    "write_ivecs",
]
