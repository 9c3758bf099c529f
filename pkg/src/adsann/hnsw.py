"""Hierarchical navigable small world (HNSW) graph with pluggable DCOs.

Query modes (benchmark labels in parentheses):

``PLAIN`` (HNSW)
    exact distances for every visited vertex.
``PD`` (HNSW*)
    partial scans against the beam threshold.
``PLUS`` (HNSW+)
    ADSampling against the ``N_ef``-th best distance.
``PLUSPLUS`` (HNSW++)
    ADSampling against the ``K``-th best *exact* distance; the beam is
    steered by the distances observed when sampling stopped.
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
from .ivf import BatchResult, KnnResult, _rotate, read_meta
from .transform import RandomOrthogonalTransform, generate_orthogonal
from .vecio import read_fvecs, read_ivecs, write_fvecs, write_ivecs

__all__ = ["HnswGraph", "QueryStats", "build_hnsw", "hnsw_query", "hnsw_search", "save_hnsw", "load_hnsw", "HNSWIndex", "MODES"]

MODES = ("PLAIN", "PD", "PLUS", "PLUSPLUS")
_ALIASES = {"HNSW": "PLAIN", "HNSW*": "PD", "HNSW+": "PLUS", "HNSW++": "PLUSPLUS"}
LABELS = {v: k for k, v in _ALIASES.items()}
_PLAIN, _PD, _PLUS, _PLUSPLUS = range(4)


def canonical_mode(mode: str) -> str:
    m = mode.upper()
    m = _ALIASES.get(m, m)
    if m not in MODES:
        raise ValueError(f"unknown HNSW mode {mode!r}; expected one of {MODES} or {tuple(_ALIASES)}")
    return m


@dataclass(eq=False)
class HnswGraph:
    """Flat adjacency storage.

    Layer 0 links of vertex ``v`` are ``links0[v, :count0[v]]`` (capacity
    ``2M``). For ``1 <= l <= levels[v]`` its links are
    ``upper[upper_offset[v] + l - 1, :upper_count[...]]`` (capacity ``M``).
    """

    data: np.ndarray
    levels: np.ndarray
    links0: np.ndarray
    count0: np.ndarray
    upper_offset: np.ndarray
    upper: np.ndarray
    upper_count: np.ndarray
    entry_point: int
    max_layer: int
    M: int
    ef_construction: int
    seed: int
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def level_mult(self) -> float:
        return 1.0 / math.log(self.M)

    def neighbors(self, v: int, layer: int = 0) -> np.ndarray:
        if layer == 0:
            return self.links0[v, : self.count0[v]]
        if layer > self.levels[v]:
            raise ValueError(f"vertex {v} is not on layer {layer}")
        row = self.upper_offset[v] + layer - 1
        return self.upper[row, : self.upper_count[row]]

    def layer(self, layer: int) -> dict[int, np.ndarray]:
        """Adjacency map of one layer."""
        verts = np.flatnonzero(self.levels >= layer)
        return {int(v): self.neighbors(int(v), layer) for v in verts}


@dataclass
class QueryStats:
    dims: int = 0
    dcos: int = 0
    hops: int = 0
    wall_time: float = 0.0


# --- construction --------------------------------------------------------


@njit(cache=True)
def _links(v, layer, links0, count0, upper_offset, upper, upper_count):
    if layer == 0:
        return links0[v, : count0[v]]
    row = upper_offset[v] + layer - 1
    return upper[row, : upper_count[row]]


@njit(cache=True)
def _search_layer_build(data, q, ep, ep_d2, ef, layer, links0, count0, upper_offset, upper, upper_count,
                        visited, tag, s_keys, s_ids, r_keys, r_ids):
    visited[ep] = tag
    ns = H.min_push(s_keys, s_ids, 0, ep_d2, ep)
    nr = H.max_push(r_keys, r_ids, 0, ep_d2, ep)
    while ns > 0:
        cd = s_keys[0]
        c = s_ids[0]
        if cd > r_keys[0]:
            break
        ns = H.min_pop(s_keys, s_ids, ns)
        nbrs = _links(c, layer, links0, count0, upper_offset, upper, upper_count)
        for t in range(nbrs.shape[0]):
            e = nbrs[t]
            if visited[e] == tag:
                continue
            visited[e] = tag
            d2 = kern.sq_dist(data[e], q)
            if nr < ef or d2 < r_keys[0]:
                ns = H.min_push(s_keys, s_ids, ns, d2, e)
                nr = H.max_push(r_keys, r_ids, nr, d2, e)
                if nr > ef:
                    nr = H.max_pop(r_keys, r_ids, nr)
    return nr


@njit(cache=True)
def _sorted_pairs(keys, ids, size):
    order = np.argsort(keys[:size], kind="mergesort")
    out_k = keys[:size][order]
    out_i = ids[:size][order]
    # equal keys: ascending id
    a = 0
    while a < size:
        b = a + 1
        while b < size and out_k[b] == out_k[a]:
            b += 1
        if b - a > 1:
            out_i[a:b] = np.sort(out_i[a:b])
        a = b
    return out_k, out_i


@njit(cache=True)
def _select_heuristic(data, cand_k, cand_i, m, out):
    """Keep a candidate only if it is closer to the base point than to every kept one."""
    kept = 0
    for a in range(cand_i.shape[0]):
        if kept >= m:
            break
        c = cand_i[a]
        good = True
        for b in range(kept):
            if kern.sq_dist(data[c], data[out[b]]) < cand_k[a]:
                good = False
                break
        if good:
            out[kept] = c
            kept += 1
    return kept


@njit(cache=True)
def _build(data, levels, M, ef_c, links0, count0, upper_offset, upper, upper_count):
    n = data.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    cap = max(ef_c, 2 * M) + 2
    s_keys = np.empty(n + 1)
    s_ids = np.empty(n + 1, dtype=np.int64)
    r_keys = np.empty(cap)
    r_ids = np.empty(cap, dtype=np.int64)
    sel = np.empty(2 * M + 1, dtype=np.int64)
    tmp_k = np.empty(2 * M + 1)
    tmp_i = np.empty(2 * M + 1, dtype=np.int64)
    ep = 0
    max_layer = levels[0]
    tag = 0
    for v in range(1, n):
        q = data[v]
        lv = levels[v]
        cur = ep
        cur_d2 = kern.sq_dist(data[cur], q)
        for layer in range(max_layer, lv, -1):
            changed = True
            while changed:
                changed = False
                nbrs = _links(cur, layer, links0, count0, upper_offset, upper, upper_count)
                for t in range(nbrs.shape[0]):
                    e = nbrs[t]
                    d2 = kern.sq_dist(data[e], q)
                    if d2 < cur_d2:
                        cur_d2 = d2
                        cur = e
                        changed = True
        for layer in range(min(lv, max_layer), -1, -1):
            tag += 1
            nr = _search_layer_build(data, q, cur, cur_d2, ef_c, layer, links0, count0, upper_offset, upper,
                                     upper_count, visited, tag, s_keys, s_ids, r_keys, r_ids)
            ck, ci = _sorted_pairs(r_keys, r_ids, nr)
            kept = _select_heuristic(data, ck, ci, M, sel)
            cap_l = 2 * M if layer == 0 else M
            # own links
            for t in range(kept):
                if layer == 0:
                    links0[v, t] = sel[t]
                else:
                    upper[upper_offset[v] + layer - 1, t] = sel[t]
            if layer == 0:
                count0[v] = kept
            else:
                upper_count[upper_offset[v] + layer - 1] = kept
            # reverse links, shrinking overfull lists with the same heuristic
            for t in range(kept):
                e = sel[t]
                if layer == 0:
                    cnt = count0[e]
                else:
                    cnt = upper_count[upper_offset[e] + layer - 1]
                if cnt < cap_l:
                    if layer == 0:
                        links0[e, cnt] = v
                        count0[e] = cnt + 1
                    else:
                        upper[upper_offset[e] + layer - 1, cnt] = v
                        upper_count[upper_offset[e] + layer - 1] = cnt + 1
                    continue
                for u in range(cnt):
                    w = links0[e, u] if layer == 0 else upper[upper_offset[e] + layer - 1, u]
                    tmp_k[u] = kern.sq_dist(data[w], data[e])
                    tmp_i[u] = w
                tmp_k[cnt] = kern.sq_dist(data[v], data[e])
                tmp_i[cnt] = v
                sk, si = _sorted_pairs(tmp_k, tmp_i, cnt + 1)
                nk = _select_heuristic(data, sk, si, cap_l, tmp_i)
                # slots past the new count are reset so that -1 always marks the end
                for u in range(cap_l):
                    w = tmp_i[u] if u < nk else -1
                    if layer == 0:
                        links0[e, u] = w
                    else:
                        upper[upper_offset[e] + layer - 1, u] = w
                if layer == 0:
                    count0[e] = nk
                else:
                    upper_count[upper_offset[e] + layer - 1] = nk
            cur = ci[0]
            cur_d2 = ck[0]
        if lv > max_layer:
            max_layer = lv
            ep = v
    return ep, max_layer


def build_hnsw(ds_transformed, M: int = 16, ef_construction: int = 500, seed: int = 42, raw=None) -> HnswGraph:
    """Insert the vectors one by one in id order.

    Levels are drawn up front as ``floor(-ln(U) / ln(M))`` from a seeded
    generator, which makes the graph a deterministic function of the data,
    ``M``, ``ef_construction`` and ``seed``.
    """
    X = np.ascontiguousarray(ds_transformed, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("build_hnsw needs a non-empty 2-d dataset")
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    if ef_construction < M:
        raise ValueError(f"ef_construction must be >= M, got {ef_construction} < {M}")
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)
    levels = np.floor(-np.log(u) / math.log(M)).astype(np.int64)
    upper_offset = np.zeros(n, dtype=np.int64)
    np.cumsum(levels[:-1], out=upper_offset[1:])
    n_upper = int(levels.sum())
    links0 = np.full((n, 2 * M), -1, dtype=np.int32)
    count0 = np.zeros(n, dtype=np.int32)
    upper = np.full((max(n_upper, 1), M), -1, dtype=np.int32)
    upper_count = np.zeros(max(n_upper, 1), dtype=np.int32)
    ep, max_layer = _build(X, levels, M, ef_construction, links0, count0, upper_offset, upper, upper_count)
    return HnswGraph(
        data=X,
        levels=levels,
        links0=links0,
        count0=count0,
        upper_offset=upper_offset,
        upper=upper,
        upper_count=upper_count,
        entry_point=int(ep),
        max_layer=int(max_layer),
        M=M,
        ef_construction=ef_construction,
        seed=seed,
        raw=None if raw is None else np.ascontiguousarray(raw, dtype=np.float32),
    )


# --- search --------------------------------------------------------------


@njit(cache=True)
def _search_one(data, q, ep, max_layer, links0, count0, upper_offset, upper, upper_count,
                topk, ef, mode, delta_d, table, visited, tag,
                s_keys, s_ids, r_keys, r_ids, r1_keys, r1_ids, out_ids, out_d2, stats):
    kmode = kern.FD if mode == _PLAIN else (kern.PD if mode == _PD else kern.AD)
    dims = 0
    dcos = 0
    hops = 0
    dim = data.shape[1]

    cur = ep
    cur_d2 = kern.sq_dist(data[cur], q)
    dims += dim
    dcos += 1
    for layer in range(max_layer, 0, -1):
        changed = True
        while changed:
            changed = False
            nbrs = _links(cur, layer, links0, count0, upper_offset, upper, upper_count)
            for t in range(nbrs.shape[0]):
                e = nbrs[t]
                pos, obs, used = kern.dco(kmode, data[e], q, cur_d2, delta_d, table)
                dims += used
                dcos += 1
                if pos and obs < cur_d2:
                    cur_d2 = obs
                    cur = e
                    changed = True
            if changed:
                hops += 1

    visited[cur] = tag
    ns = H.min_push(s_keys, s_ids, 0, cur_d2, cur)
    nr = H.max_push(r_keys, r_ids, 0, cur_d2, cur)
    n1 = 0
    if mode == _PLUSPLUS:
        n1 = H.max_push(r1_keys, r1_ids, 0, cur_d2, cur)
    while ns > 0:
        if s_keys[0] > r_keys[0]:
            break
        c = s_ids[0]
        ns = H.min_pop(s_keys, s_ids, ns)
        hops += 1
        nbrs = links0[c, : count0[c]]
        for t in range(nbrs.shape[0]):
            e = nbrs[t]
            if visited[e] == tag:
                continue
            visited[e] = tag
            if mode == _PLUSPLUS:
                r2 = r1_keys[0] if n1 == topk else np.inf
            else:
                r2 = r_keys[0] if nr == ef else np.inf
            pos, obs, used = kern.dco(kmode, data[e], q, r2, delta_d, table)
            dims += used
            dcos += 1
            if mode == _PLUSPLUS:
                if pos and (n1 < topk or obs < r1_keys[0]):
                    n1 = H.max_push(r1_keys, r1_ids, n1, obs, e)
                    if n1 > topk:
                        n1 = H.max_pop(r1_keys, r1_ids, n1)
                if nr < ef or obs < r_keys[0]:
                    ns = H.min_push(s_keys, s_ids, ns, obs, e)
                    nr = H.max_push(r_keys, r_ids, nr, obs, e)
                    if nr > ef:
                        nr = H.max_pop(r_keys, r_ids, nr)
            elif pos and (nr < ef or obs < r_keys[0]):
                ns = H.min_push(s_keys, s_ids, ns, obs, e)
                nr = H.max_push(r_keys, r_ids, nr, obs, e)
                if nr > ef:
                    nr = H.max_pop(r_keys, r_ids, nr)

    if mode == _PLUSPLUS:
        fk, fi = _sorted_pairs(r1_keys, r1_ids, n1)
    else:
        fk, fi = _sorted_pairs(r_keys, r_ids, nr)
    m = min(topk, fk.shape[0])
    for a in range(m):
        out_ids[a] = fi[a]
        out_d2[a] = fk[a]
    for a in range(m, topk):
        out_ids[a] = -1
        out_d2[a] = np.inf
    stats[0] = dims
    stats[1] = dcos
    stats[2] = hops


@njit(cache=True)
def _search_batch(Q, rotation, data, ep, max_layer, links0, count0, upper_offset, upper, upper_count,
                  topk, ef, mode, delta_d, table, out_ids, out_d2, out_stats):
    n = data.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    s_keys = np.empty(n + 1)
    s_ids = np.empty(n + 1, dtype=np.int64)
    r_keys = np.empty(ef + 2)
    r_ids = np.empty(ef + 2, dtype=np.int64)
    r1_keys = np.empty(topk + 2)
    r1_ids = np.empty(topk + 2, dtype=np.int64)
    for qi in range(Q.shape[0]):
        q = _rotate(rotation, Q[qi]) if rotation.shape[0] > 0 else Q[qi]
        _search_one(data, q, ep, max_layer, links0, count0, upper_offset, upper, upper_count,
                    topk, ef, mode, delta_d, table, visited, qi + 1,
                    s_keys, s_ids, r_keys, r_ids, r1_keys, r1_ids, out_ids[qi], out_d2[qi], out_stats[qi])


@dataclass
class HnswBatchResult(BatchResult):
    dcos: np.ndarray = None
    hops: np.ndarray = None

    def stats(self, i) -> QueryStats:
        return QueryStats(int(self.dims[i]), int(self.dcos[i]), int(self.hops[i]), self.wall_time / len(self.ids))


_MODE_CODE = {"PLAIN": _PLAIN, "PD": _PD, "PLUS": _PLUS, "PLUSPLUS": _PLUSPLUS}


def hnsw_search(
    g: HnswGraph,
    queries,
    K: int,
    ef: int,
    mode: str = "PLUSPLUS",
    cfg: DcoConfig = DcoConfig(),
    rotation: np.ndarray | None = None,
) -> HnswBatchResult:
    """Batch search in one compiled loop.

    ``queries`` must be rotated for PLUS/PLUSPLUS and raw for PLAIN/PD when
    the graph keeps raw vectors; alternatively pass raw queries together
    with ``rotation`` and they are rotated inside the timed loop.
    ``n_candidates`` of the result counts DCOs.
    """
    mode = canonical_mode(mode)
    if K < 1:
        raise ValueError("K must be >= 1")
    if ef < K:
        raise ValueError(f"N_ef must be >= K, got {ef} < {K}")
    dim = g.dim
    if mode in ("PLUS", "PLUSPLUS"):
        cfg.check_dim(dim)
    Q = np.ascontiguousarray(queries, dtype=np.float32)
    if Q.ndim != 2 or Q.shape[1] != dim:
        raise ValueError(f"queries must have shape (m, {dim}), got {Q.shape}")
    data = g.data
    if mode in ("PLAIN", "PD") and g.raw is not None:
        data = g.raw
        rotation = None
    code = _MODE_CODE[mode]
    table = kern.ratio_table(dim, cfg.epsilon0) if code >= _PLUS else np.zeros(dim + 1)
    # float32 keeps the matrix small enough to stay cache resident between queries
    rot = np.empty((0, 0), dtype=np.float32) if rotation is None else np.ascontiguousarray(rotation, dtype=np.float32)
    m = Q.shape[0]
    out_ids = np.empty((m, K), dtype=np.int64)
    out_d2 = np.empty((m, K))
    out_stats = np.zeros((m, 3), dtype=np.int64)
    t0 = time.perf_counter()
    _search_batch(Q, rot, data, g.entry_point, g.max_layer, g.links0, g.count0, g.upper_offset, g.upper,
                  g.upper_count, K, ef, code, cfg.delta_d, table, out_ids, out_d2, out_stats)
    elapsed = time.perf_counter() - t0
    return HnswBatchResult(
        out_ids, np.sqrt(out_d2), out_stats[:, 0].copy(), out_stats[:, 1].copy(), elapsed,
        dcos=out_stats[:, 1].copy(), hops=out_stats[:, 2].copy(),
    )


def hnsw_query(
    g: HnswGraph,
    q_transformed,
    K: int,
    ef: int,
    mode: str = "PLUSPLUS",
    cfg: DcoConfig = DcoConfig(),
    q_raw=None,
) -> tuple[KnnResult, QueryStats]:
    mode = canonical_mode(mode)
    q = q_transformed
    if mode in ("PLAIN", "PD") and g.raw is not None:
        if q_raw is None:
            raise ValueError(f"mode {mode} needs the raw query")
        q = q_raw
    q = np.asarray(q, dtype=np.float32)
    if q.shape != (g.dim,):
        raise ValueError(f"query must have shape ({g.dim},), got {q.shape}")
    res = hnsw_search(g, q[None, :], K, ef, mode, cfg)
    return res[0], res.stats(0)


# --- persistence ---------------------------------------------------------


def save_hnsw(g: HnswGraph, directory: os.PathLike) -> None:
    """Layered adjacency as ivecs (``-1`` pads unused slots) plus ``meta.txt``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_fvecs(out / "data.fvecs", g.data)
    if g.raw is not None:
        write_fvecs(out / "raw.fvecs", g.raw)
    write_ivecs(out / "levels.ivecs", g.levels[None, :])
    write_ivecs(out / "layer0.ivecs", g.links0)
    if g.levels.sum() > 0:
        write_ivecs(out / "upper.ivecs", g.upper)
    meta = {
        "kind": "hnsw",
        "n": g.n,
        "d": g.dim,
        "M": g.M,
        "ef_construction": g.ef_construction,
        "entry_point": g.entry_point,
        "max_layer": g.max_layer,
        "seed": g.seed,
        "has_raw": int(g.raw is not None),
    }
    (out / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def load_hnsw(directory: os.PathLike) -> HnswGraph:
    src = Path(directory)
    meta = read_meta(src)
    if meta.get("kind") != "hnsw":
        raise ValueError(f"{src} does not hold an HNSW graph")
    M = int(meta["M"])
    levels = read_ivecs(src / "levels.ivecs")[0].astype(np.int64)
    links0 = read_ivecs(src / "layer0.ivecs")
    n_upper = int(levels.sum())
    if n_upper:
        upper = read_ivecs(src / "upper.ivecs")
    else:
        upper = np.full((1, M), -1, dtype=np.int32)
    upper_offset = np.zeros(len(levels), dtype=np.int64)
    np.cumsum(levels[:-1], out=upper_offset[1:])
    return HnswGraph(
        data=read_fvecs(src / "data.fvecs"),
        levels=levels,
        links0=links0,
        count0=(links0 >= 0).sum(1).astype(np.int32),
        upper_offset=upper_offset,
        upper=upper,
        upper_count=(upper >= 0).sum(1).astype(np.int32),
        entry_point=int(meta["entry_point"]),
        max_layer=int(meta["max_layer"]),
        M=M,
        ef_construction=int(meta["ef_construction"]),
        seed=int(meta["seed"]),
        raw=read_fvecs(src / "raw.fvecs") if meta.get("has_raw") == "1" else None,
    )


class HNSWIndex(BaseEstimator):
    """HNSW nearest-neighbour estimator.

    The graph is built over rotated vectors; raw vectors are kept as well so
    the exact modes skip the query rotation.

    Parameters
    ----------
    M : int
        Out-degree bound on upper layers (``2M`` on layer 0).
    ef_construction : int
        Beam width while inserting.
    ef : int
        Beam width ``N_ef`` at query time.
    mode : str
        One of ``MODES`` or an algorithm label such as ``"HNSW++"``.
    epsilon0, delta_d : ADSampling significance knob and batch size.
    random_state : int
        Seeds the rotation and the level draws.
    """

    def __init__(
        self,
        M=16,
        ef_construction=500,
        ef=100,
        mode="PLUSPLUS",
        epsilon0=DEFAULT_EPSILON0,
        delta_d=DEFAULT_DELTA_D,
        random_state=42,
    ):
        self.M = M
        self.ef_construction = ef_construction
        self.ef = ef
        self.mode = mode
        self.epsilon0 = epsilon0
        self.delta_d = delta_d
        self.random_state = random_state

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float32)
        self.rotation_ = RandomOrthogonalTransform(self.random_state).fit(X)
        Y = self.rotation_.transform(X)
        self.graph_ = build_hnsw(Y, self.M, self.ef_construction, self.random_state, raw=X)
        return self

    @classmethod
    def from_graph(cls, graph: HnswGraph, **params) -> "HNSWIndex":
        """Wrap a loaded :class:`HnswGraph`; the rotation is regenerated from its seed."""
        est = cls(M=graph.M, ef_construction=graph.ef_construction, random_state=graph.seed, **params)
        est.rotation_ = RandomOrthogonalTransform(graph.seed)
        est.rotation_.matrix_ = generate_orthogonal(graph.dim, graph.seed)
        est.rotation_.n_features_in_ = graph.dim
        est.n_features_in_ = graph.dim
        est.graph_ = graph
        return est

    def search(self, X, n_neighbors=10, ef=None, mode=None) -> HnswBatchResult:
        check_is_fitted(self, "graph_")
        mode = canonical_mode(mode or self.mode)
        ef = self.ef if ef is None else ef
        cfg = DcoConfig(self.epsilon0, self.delta_d)
        return hnsw_search(self.graph_, X, n_neighbors, ef, mode, cfg, rotation=self.rotation_.matrix_.entries)

    def query(self, q, n_neighbors=10, ef=None, mode=None) -> tuple[KnnResult, QueryStats]:
        q = np.asarray(q, dtype=np.float32)
        res = self.search(q[None, :], n_neighbors, ef, mode)
        return res[0], res.stats(0)

    def kneighbors(self, X, n_neighbors=10, return_distance=True, ef=None, mode=None):
        check_is_fitted(self, "graph_")
        X = validate_data(self, X, reset=False, dtype=np.float32)
        res = self.search(X, n_neighbors, ef, mode)
        self.last_result_ = res
        return (res.distances, res.ids) if return_distance else res.ids
