"""K-Means codebook training and vector <-> code mapping.

Lloyd's algorithm with k-means++ seeding, deterministic empty-cluster repair,
and a per-iteration distortion record that is asserted non-increasing. An
exact-enumeration mode covers tiny instances where the global optimum is wanted.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CodeOutOfRange, DegenerateData, DimensionMismatch, TooFewPoints
from .model import Codebook, PatchMatrix, QuantizedDocument

INIT_METHODS = ("kmeanspp", "random-points")


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 50
    rel_tol: float = 1e-4
    seed: int = 0
    init: str = "kmeanspp"
    n_init: int = 1  # independent restarts, best distortion wins
    exact: bool = False  # enumerate all partitions (tiny instances only)

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"K must be >= 2, got {self.k}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (K, D) float32
    labels: np.ndarray  # (N,) int32, final assignment of training points
    distortion_history: list  # total squared distortion at each assignment step
    iterations: int

    @property
    def distortion(self) -> float:
        return self.distortion_history[-1]

    @property
    def mean_squared_distortion(self) -> float:
        return self.distortion / len(self.labels)


_CHUNK = 65536


def _assign_chunked(points: np.ndarray, centroids: np.ndarray):
    """Nearest centroid per point by squared L2, ties to the lowest index.

    Fixed chunk order keeps reductions bit-identical regardless of data size.
    """
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int32)
    d2 = np.empty(n, dtype=np.float64)
    c64 = centroids.astype(np.float32).astype(np.float64)
    c_sq = (c64 ** 2).sum(axis=1)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        x = points[lo:hi].astype(np.float64)
        dist = (x ** 2).sum(axis=1)[:, None] - 2.0 * (x @ c64.T) + c_sq[None, :]
        labels[lo:hi] = np.argmin(dist, axis=1)
        d2[lo:hi] = np.maximum(dist[np.arange(hi - lo), labels[lo:hi]], 0.0)
    return labels, d2


def _means(points: np.ndarray, labels: np.ndarray, k: int):
    counts = np.bincount(labels, minlength=k)
    d = points.shape[1]
    sums = np.empty((k, d), dtype=np.float64)
    for j in range(d):
        sums[:, j] = np.bincount(labels, weights=points[:, j].astype(np.float64), minlength=k)
    return sums, counts


def _lloyd_once(points: np.ndarray, cfg: KMeansConfig, seed: int) -> KMeansResult:
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    if cfg.init == "kmeanspp":
        centroids = _kmeanspp_init(points, cfg.k, rng)
    else:
        idx = rng.choice(n, size=cfg.k, replace=False)
        centroids = points[np.sort(idx)].astype(np.float64)

    history = []
    labels = None
    for it in range(cfg.max_iters):
        labels, d2 = _assign_chunked(points, centroids)
        distortion = float(d2.sum())
        if history and distortion > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(
                f"Lloyd distortion increased: {history[-1]} -> {distortion} at iteration {it}"
            )
        converged = bool(history) and abs(history[-1] - distortion) <= cfg.rel_tol * max(history[-1], 1e-300)
        history.append(distortion)
        if converged:
            break
        sums, counts = _means(points, labels, cfg.k)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if empty.size:
            centroids = _repair_empty(points, centroids, labels, d2, empty)
    # Final assignment against the final centroids.
    labels, d2 = _assign_chunked(points, centroids)
    final = float(d2.sum())
    if final <= history[-1] * (1 + 1e-12) + 1e-12:
        history.append(final)
    return KMeansResult(centroids.astype(np.float32), labels, history, len(history))


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    pts64 = points.astype(np.float64)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = pts64[first]
    d2 = ((pts64 - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with chosen centroids; pick uniformly.
            nxt = int(rng.integers(n))
        else:
            r = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(d2), r))
            nxt = min(nxt, n - 1)
        centroids[i] = pts64[nxt]
        d2 = np.minimum(d2, ((pts64 - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _repair_empty(points, centroids, labels, d2, empty) -> np.ndarray:
    """Move each empty centroid onto the training point farthest from its centroid.

    Points are claimed in farthest-first order so repaired centroids stay distinct.
    """
    order = np.argsort(-d2, kind="stable")
    used = 0
    for e in empty:
        centroids[e] = points[order[used]].astype(np.float64)
        used += 1
    return centroids


def _dedupe_centroids(points: np.ndarray, result: KMeansResult) -> KMeansResult:
    """Guarantee no two centroids are bit-identical after training."""
    c = result.centroids
    _, first_idx = np.unique(c, axis=0, return_index=True)
    if first_idx.size == c.shape[0]:
        return result
    uniq_pts = np.unique(points, axis=0)
    if uniq_pts.shape[0] < c.shape[0]:
        raise DegenerateData(
            f"only {uniq_pts.shape[0]} distinct training points for K={c.shape[0]}"
        )
    c = c.copy()
    taken = {c[i].tobytes() for i in first_idx}
    dup = [i for i in range(c.shape[0]) if i not in set(first_idx.tolist())]
    # Deterministic replacement: walk points by descending distance to their centroid.
    _, d2 = _assign_chunked(points, c.astype(np.float64))
    order = np.argsort(-d2, kind="stable")
    oi = 0
    for i in dup:
        while oi < order.size and points[order[oi]].astype(np.float32).tobytes() in taken:
            oi += 1
        if oi >= order.size:
            raise DegenerateData("cannot repair duplicate centroids: no unused distinct point")
        c[i] = points[order[oi]]
        taken.add(c[i].tobytes())
    labels, d2 = _assign_chunked(points, c.astype(np.float64))
    result.centroids = c
    result.labels = labels
    result.distortion_history.append(float(d2.sum()))
    return result


def _exact_partition(points: np.ndarray, k: int) -> KMeansResult:
    """Globally optimal clustering by enumerating all partitions into k clusters."""
    n = points.shape[0]
    if n > 14:
        raise ValueError("exact mode supports at most 14 points")
    pts = points.astype(np.float64)
    best = None
    for labels in _restricted_growth(n, k):
        lab = np.asarray(labels)
        cost = 0.0
        cents = np.zeros((k, points.shape[1]))
        for c in range(k):
            members = pts[lab == c]
            mu = members.mean(axis=0)
            cents[c] = mu
            cost += float(((members - mu) ** 2).sum())
        if best is None or cost < best[0] - 1e-15:
            best = (cost, lab, cents)
    cost, lab, cents = best
    return KMeansResult(cents.astype(np.float32), lab.astype(np.int32), [cost], 1)


def _restricted_growth(n: int, k: int):
    """All surjective label sequences onto {0..k-1} in canonical (restricted growth) form."""
    def rec(prefix, used):
        if len(prefix) == n:
            if used == k:
                yield list(prefix)
            return
        if used + (n - len(prefix)) < k:
            return
        for c in range(min(used + 1, k)):
            prefix.append(c)
            yield from rec(prefix, max(used, c + 1))
            prefix.pop()
    yield from rec([], 0)


def train_result(points: np.ndarray, cfg: KMeansConfig) -> KMeansResult:
    points = np.ascontiguousarray(points, dtype=np.float32)
    if points.ndim != 2:
        raise DimensionMismatch("training points must be a 2-D matrix")
    if not np.isfinite(points).all():
        raise ValueError("training points contain non-finite values")
    n = points.shape[0]
    if n < cfg.k:
        raise TooFewPoints(f"need at least K={cfg.k} points, got {n}")
    if cfg.exact:
        result = _exact_partition(points, cfg.k)
    else:
        best = None
        for r in range(cfg.n_init):
            res = _lloyd_once(points, cfg, cfg.seed + r)
            if best is None or res.distortion < best.distortion - 1e-15:
                best = res
        result = best
    return _dedupe_centroids(points, result)


def train(points: np.ndarray, cfg: KMeansConfig, similarity_mode: str = "cosine") -> Codebook:
    result = train_result(points, cfg)
    return Codebook(result.centroids, similarity_mode, cfg.seed)


def assign_many(cb: Codebook, vectors: np.ndarray) -> np.ndarray:
    """Nearest-centroid code per row, ties to the lowest index."""
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim == 1:
        vectors = vectors[None, :]
    if vectors.shape[1] != cb.dim:
        raise DimensionMismatch(f"vector dim {vectors.shape[1]} != codebook dim {cb.dim}")
    if cb.similarity_mode == "dot":
        sims = vectors.astype(np.float64) @ cb.centroids.astype(np.float64).T
        return np.argmax(sims, axis=1).astype(np.uint16)
    labels, _ = _assign_chunked(vectors, cb.centroids.astype(np.float64))
    return labels.astype(np.uint16)


def assign(cb: Codebook, v: np.ndarray) -> int:
    return int(assign_many(cb, np.asarray(v))[0])


def assign_batch(cb: Codebook, pm: PatchMatrix) -> QuantizedDocument:
    return QuantizedDocument(pm.doc_id, assign_many(cb, pm.patches))


def decode(cb: Codebook, code: int) -> np.ndarray:
    if not 0 <= code < cb.k:
        raise CodeOutOfRange(f"code {code} out of range [0, {cb.k})")
    return cb.centroids[code].copy()


def decode_many(cb: Codebook, codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and int(codes.max()) >= cb.k:
        raise CodeOutOfRange(f"code {int(codes.max())} out of range [0, {cb.k})")
    return cb.centroids[codes]
