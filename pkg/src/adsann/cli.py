"""Command line entry point: ``adsann <subcommand> ...``.

Every subcommand reads and writes fvecs/ivecs files. The default seed is 42
and can be overridden by the ``ADSANN_SEED`` environment variable or, per
call, by ``--seed``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .dco import DEFAULT_DELTA_D, DEFAULT_EPSILON0
from .hnsw import HNSWIndex, load_hnsw, save_hnsw
from .ivf import IVFIndex, load_ivf, save_ivf
from .transform import apply_dataset, generate_orthogonal, save_matrix
from .vecio import DatasetDescriptor, read_fvecs, read_ivecs, synth_dataset, write_descriptor, write_fvecs, write_ivecs


def default_seed() -> int:
    value = os.environ.get("ADSANN_SEED")
    if value is None or value == "":
        return 42
    try:
        return int(value)
    except ValueError:
        raise SystemExit(f"ADSANN_SEED must be an integer, got {value!r}") from None


def _dco_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon0", type=float, default=DEFAULT_EPSILON0)
    p.add_argument("--delta-d", type=int, default=DEFAULT_DELTA_D)


def _query_flags(p: argparse.ArgumentParser, *, required: bool) -> None:
    p.add_argument("--queries", type=Path, required=required, help="query vectors (fvecs)")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--output", type=Path, help="write result ids here (ivecs)")
    p.add_argument("--gt", type=Path, help="ground truth ivecs; prints recall when given")


def _report(res, gt_path: Path | None, K: int, output: Path | None) -> None:
    ids = np.where(res.ids < 0, -1, res.ids).astype(np.int32)
    if output is not None:
        write_ivecs(output, ids)
    qps = len(ids) / res.wall_time if res.wall_time > 0 else float("inf")
    line = f"queries={len(ids)} qps={qps:.1f} avg_dims={res.dims.mean():.2f}"
    if gt_path is not None:
        gt = read_ivecs(gt_path)
        rec = np.mean([bench.recall(a, b, K) for a, b in zip(ids, gt)])
        line += f" recall={rec:.4f}"
    print(line)


def cmd_synth(a) -> None:
    X = synth_dataset(a.n + a.n_queries, a.d, a.blobs, a.spread, a.seed, decay=a.decay)
    perm = np.random.default_rng(a.seed).permutation(len(X))
    X = X[perm]
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(out / "base.fvecs", X[: a.n])
    write_fvecs(out / "query.fvecs", X[a.n :])
    gt_path = None
    if a.K:
        ids, _ = bench.brute_force_knn(X[: a.n], X[a.n :], a.K)
        gt_path = out / "gt.ivecs"
        write_ivecs(gt_path, ids)
    write_descriptor(
        out / "dataset.txt",
        DatasetDescriptor("synth", Path("base.fvecs"), Path("query.fvecs"), gt_path and Path("gt.ivecs"), a.d),
    )
    print(f"wrote {out}")


def cmd_transform(a) -> None:
    X = read_fvecs(a.input)
    m = generate_orthogonal(X.shape[1], a.seed)
    write_fvecs(a.output, apply_dataset(m, X))
    save_matrix(a.matrix, m)
    print(f"rotated {X.shape[0]} vectors of dimension {X.shape[1]}; error {m.orthogonality_error():.2e}")


def cmd_gt(a) -> None:
    ids, _ = bench.brute_force_knn(read_fvecs(a.base), read_fvecs(a.queries), a.K)
    write_ivecs(a.output, ids)
    print(f"wrote {ids.shape[0]} x {a.K} ground truth ids to {a.output}")


def _ivf_from_dir(a) -> IVFIndex:
    idx = load_ivf(a.index_dir)
    return IVFIndex.from_index(idx, n_probe=a.nprobe, mode=a.mode, epsilon0=a.epsilon0, delta_d=a.delta_d)


def cmd_build_ivf(a) -> None:
    X = read_fvecs(a.base)
    est = IVFIndex(
        n_clusters=a.k_clusters, n_probe=a.nprobe, mode=a.mode, epsilon0=a.epsilon0,
        delta_d=a.delta_d, layout=a.layout, random_state=a.seed,
    ).fit(X)
    save_ivf(est.index_, a.index_dir)
    print(f"IVF index with {est.index_.n_clusters} buckets written to {a.index_dir}")
    if a.queries is not None:
        _report(est.search(read_fvecs(a.queries), a.K), a.gt, a.K, a.output)


def cmd_query_ivf(a) -> None:
    est = _ivf_from_dir(a)
    _report(est.search(read_fvecs(a.queries), a.K), a.gt, a.K, a.output)


def _hnsw_from_dir(a) -> HNSWIndex:
    g = load_hnsw(a.index_dir)
    return HNSWIndex.from_graph(g, ef=a.nef, mode=a.mode, epsilon0=a.epsilon0, delta_d=a.delta_d)


def cmd_build_hnsw(a) -> None:
    X = read_fvecs(a.base)
    est = HNSWIndex(
        M=a.M, ef_construction=a.ef_construction, ef=a.nef, mode=a.mode,
        epsilon0=a.epsilon0, delta_d=a.delta_d, random_state=a.seed,
    ).fit(X)
    save_hnsw(est.graph_, a.index_dir)
    print(f"HNSW graph over {X.shape[0]} vectors written to {a.index_dir}")
    if a.queries is not None:
        _report(est.search(read_fvecs(a.queries), a.K), a.gt, a.K, a.output)


def cmd_query_hnsw(a) -> None:
    est = _hnsw_from_dir(a)
    _report(est.search(read_fvecs(a.queries), a.K), a.gt, a.K, a.output)


def cmd_bench(a) -> None:
    X = read_fvecs(a.base)
    Q = read_fvecs(a.queries)
    gt_ids, gt_d = bench.brute_force_knn(X, Q, a.K)
    if a.index == "ivf":
        est = _ivf_from_dir(a) if a.index_dir else IVFIndex(
            n_clusters=a.k_clusters, epsilon0=a.epsilon0, delta_d=a.delta_d, random_state=a.seed
        ).fit(X)
        modes = a.modes or ["FD", "PD", "AD", "AD_SPLIT"]
    else:
        est = _hnsw_from_dir(a) if a.index_dir else HNSWIndex(
            M=a.M, ef_construction=a.ef_construction, epsilon0=a.epsilon0, delta_d=a.delta_d, random_state=a.seed
        ).fit(X)
        modes = a.modes or ["PLAIN", "PD", "PLUS", "PLUSPLUS"]
    records = bench.run_sweep(est, Q, gt_ids, gt_d, modes, a.params, K=a.K, repeats=a.repeats)
    text = bench.write_csv(records, a.output)
    if a.output is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {len(records)} rows to {a.output}")


def cmd_verify(a) -> None:
    X = read_fvecs(a.base)
    Q = read_fvecs(a.queries)
    if a.n_queries:
        Q = Q[: a.n_queries]
    rows = bench.verify_theory(X, Q, a.K, a.eps, seed=a.seed, delta_d=a.delta_d)
    lines = ["epsilon0,failure_rate,avg_dims,positives,dcos"]
    lines += [f"{r.epsilon0:g},{r.failure_rate:.6f},{r.avg_dims:.3f},{r.positives},{r.dcos}" for r in rows]
    text = "\n".join(lines) + "\n"
    if a.output is None:
        sys.stdout.write(text)
    else:
        Path(a.output).write_text(text)
        print(f"wrote {len(rows)} rows to {a.output}")


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    parser = argparse.ArgumentParser(prog="adsann", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic blob dataset")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--d", type=int, default=128)
    p.add_argument("--blobs", type=int, default=64)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--decay", type=float, default=1.5)
    p.add_argument("--K", type=int, default=100, help="ground-truth depth; 0 skips it")
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transform", help="rotate a dataset by a random orthogonal matrix")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--matrix", type=Path, required=True, help="matrix output (fvecs, D rows)")
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("gt", help="brute-force ground truth")
    p.add_argument("--base", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--K", type=int, default=100)
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_gt)

    for name, func, building in (("build-ivf", cmd_build_ivf, True), ("query-ivf", cmd_query_ivf, False)):
        p = sub.add_parser(name, help=("build" if building else "query") + " an IVF index")
        if building:
            p.add_argument("--base", type=Path, required=True)
            p.add_argument("--k-clusters", type=int, default=None)
            p.add_argument("--layout", choices=("split", "contiguous"), default="split")
        p.add_argument("--index-dir", type=Path, required=True)
        p.add_argument("--nprobe", type=int, default=16)
        p.add_argument("--mode", default="AD_SPLIT")
        _dco_flags(p)
        _query_flags(p, required=not building)
        p.add_argument("--seed", type=int, default=seed)
        p.set_defaults(func=func)

    for name, func, building in (("build-hnsw", cmd_build_hnsw, True), ("query-hnsw", cmd_query_hnsw, False)):
        p = sub.add_parser(name, help=("build" if building else "query") + " an HNSW graph")
        if building:
            p.add_argument("--base", type=Path, required=True)
            p.add_argument("--M", type=int, default=16)
            p.add_argument("--ef-construction", type=int, default=500)
        p.add_argument("--index-dir", type=Path, required=True)
        p.add_argument("--nef", type=int, default=100)
        p.add_argument("--mode", default="PLUSPLUS")
        _dco_flags(p)
        _query_flags(p, required=not building)
        p.add_argument("--seed", type=int, default=seed)
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="QPS / recall sweep written as CSV")
    p.add_argument("--index", choices=("ivf", "hnsw"), required=True)
    p.add_argument("--base", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--index-dir", type=Path, help="reuse a saved index instead of building one")
    p.add_argument("--modes", nargs="+")
    p.add_argument("--params", type=int, nargs="+", required=True, help="n_probe or N_ef values")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--k-clusters", type=int, default=None)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=500)
    p.add_argument("--nprobe", type=int, default=16, help=argparse.SUPPRESS)
    p.add_argument("--nef", type=int, default=100, help=argparse.SUPPRESS)
    p.add_argument("--mode", default=None, help=argparse.SUPPRESS)
    _dco_flags(p)
    p.add_argument("--output", type=Path)
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="fixed-threshold ADSampling failure rates")
    p.add_argument("--base", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--n-queries", type=int, default=0, help="use only the first N queries")
    p.add_argument("--K", type=int, default=100)
    p.add_argument("--eps", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    p.add_argument("--delta-d", type=int, default=1)
    p.add_argument("--output", type=Path)
    p.add_argument("--seed", type=int, default=seed)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"adsann: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
