"""Candidate generation over the quantized corpus: flat scan, centroid postings, HNSW."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .binary import hamming_many
from .errors import CodebookMismatch, EmptyIndex
from .model import QuantizedDocument


# ---------------------------------------------------------------------------
# Centroid postings (inverted file over codes)
# ---------------------------------------------------------------------------


@dataclass
class CentroidPostings:
    """For each code k: (doc position, patch index) pairs, sorted, plus unique doc positions."""

    k: int
    doc_ids: np.ndarray  # (n_docs,) uint64, position -> doc_id
    posting_docs: list  # per code: int32 array of doc positions
    posting_patches: list  # per code: int32 array of patch indices
    unique_docs: list  # per code: int32 array of distinct doc positions

    def pairs(self, code: int) -> list:
        """(doc_id, patch index) pairs for one code."""
        return [
            (int(self.doc_ids[d]), int(p))
            for d, p in zip(self.posting_docs[code], self.posting_patches[code])
        ]

    @property
    def total_postings(self) -> int:
        return sum(a.size for a in self.posting_docs)


def build_postings(documents: Sequence[QuantizedDocument], k: int) -> CentroidPostings:
    doc_ids = np.array([d.doc_id for d in documents], dtype=np.uint64)
    all_codes, all_docs, all_patches = [], [], []
    for pos, doc in enumerate(documents):
        if int(doc.codes.max()) >= k:
            raise CodebookMismatch(f"doc {doc.doc_id} has code >= K={k}")
        all_codes.append(doc.codes.astype(np.int64))
        all_docs.append(np.full(doc.num_patches, pos, dtype=np.int64))
        all_patches.append(np.arange(doc.num_patches, dtype=np.int64))
    codes = np.concatenate(all_codes)
    docs = np.concatenate(all_docs)
    patches = np.concatenate(all_patches)
    # Sort by (code, doc position, patch index); docs were appended in position
    # order so a stable sort on code alone preserves the inner order.
    order = np.argsort(codes, kind="stable")
    codes, docs, patches = codes[order], docs[order], patches[order]
    bounds = np.searchsorted(codes, np.arange(k + 1))
    posting_docs, posting_patches, unique_docs = [], [], []
    for c in range(k):
        lo, hi = bounds[c], bounds[c + 1]
        posting_docs.append(docs[lo:hi].astype(np.int32))
        posting_patches.append(patches[lo:hi].astype(np.int32))
        unique_docs.append(np.unique(docs[lo:hi]).astype(np.int32))
    return CentroidPostings(k, doc_ids, posting_docs, posting_patches, unique_docs)


def _top_docs_by_hits(hit_scores: np.ndarray, hit_any: np.ndarray, doc_ids: np.ndarray, r: int) -> list:
    """Docs with >=1 hit ranked by score descending, ties by ascending doc_id."""
    cand = np.flatnonzero(hit_any)
    if cand.size == 0:
        return []
    order = np.lexsort((doc_ids[cand], -hit_scores[cand]))
    return [int(doc_ids[cand[i]]) for i in order[:r]]


def postings_candidates(
    postings: CentroidPostings,
    centroid_sims: np.ndarray,  # (Q', K) similarity of each retained query patch to each centroid
    attention: np.ndarray,  # (Q',) retained query patch weights
    c_nearest: int,
    r: int,
) -> list:
    """Union the c_nearest centroids' postings per query patch; rank docs by
    attention-weighted hit count; return the top r doc_ids."""
    n_docs = postings.doc_ids.size
    scores = np.zeros(n_docs, dtype=np.float64)
    hit_any = np.zeros(n_docs, dtype=bool)
    c = min(c_nearest, postings.k)
    for i in range(centroid_sims.shape[0]):
        top = np.argsort(-centroid_sims[i], kind="stable")[:c]
        hits = [postings.unique_docs[int(code)] for code in top]
        hits = [h for h in hits if h.size]
        if not hits:
            continue
        docs = np.unique(np.concatenate(hits))
        scores[docs] += float(attention[i])
        hit_any[docs] = True
    return _top_docs_by_hits(scores, hit_any, postings.doc_ids, r)


# ---------------------------------------------------------------------------
# Hamming scan structure over all corpus patch codes
# ---------------------------------------------------------------------------


@dataclass
class HammingScan:
    """Flat view of every corpus patch code for XOR+popcount scanning."""

    bits_per_code: int
    codes: np.ndarray  # (total patches,) uint16
    doc_pos: np.ndarray  # (total patches,) int32 position into the document list
    doc_ids: np.ndarray  # (n_docs,) uint64


def build_hamming_scan(documents: Sequence[QuantizedDocument], bits_per_code: int) -> HammingScan:
    doc_ids = np.array([d.doc_id for d in documents], dtype=np.uint64)
    codes = np.concatenate([d.codes for d in documents]).astype(np.uint16)
    doc_pos = np.concatenate(
        [np.full(d.num_patches, pos, dtype=np.int32) for pos, d in enumerate(documents)]
    )
    if codes.size and int(codes.max()) >= (1 << bits_per_code):
        raise CodebookMismatch("corpus codes wider than the declared bit width")
    return HammingScan(bits_per_code, codes, doc_pos, doc_ids)


def hamming_candidates(
    scan: HammingScan,
    query_codes: np.ndarray,  # (Q',) quantized retained query patches
    attention: np.ndarray,
    per_patch_hits: int,
    r: int,
) -> list:
    """Per query patch, the per_patch_hits Hamming-nearest corpus patches vote
    for their documents with the patch's attention weight."""
    n_docs = scan.doc_ids.size
    scores = np.zeros(n_docs, dtype=np.float64)
    hit_any = np.zeros(n_docs, dtype=bool)
    n = min(per_patch_hits, scan.codes.size)
    patch_idx = np.arange(scan.codes.size)
    for i, qc in enumerate(query_codes):
        d = hamming_many(int(qc), scan.codes)
        top = np.lexsort((patch_idx, d))[:n]
        docs = np.unique(scan.doc_pos[top])
        scores[docs] += float(attention[i])
        hit_any[docs] = True
    return _top_docs_by_hits(scores, hit_any, scan.doc_ids, r)


# ---------------------------------------------------------------------------
# Flat (exact) search
# ---------------------------------------------------------------------------


def flat_search(vectors: np.ndarray, query: np.ndarray, top_n: int) -> list:
    """Exact top_n by squared L2 distance, ties by ascending insertion index."""
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise EmptyIndex("flat_search requires a non-empty vector set")
    q = np.asarray(query, dtype=np.float64)
    d2 = ((vectors.astype(np.float64) - q) ** 2).sum(axis=1)
    n = min(top_n, vectors.shape[0])
    order = np.lexsort((np.arange(vectors.shape[0]), d2))[:n]
    return [(int(i), float(d2[i])) for i in order]


# ---------------------------------------------------------------------------
# HNSW graph
# ---------------------------------------------------------------------------


class HnswGraph:
    """Layered proximity graph over vectors with per-node payload lists.

    Bit-identical inputs (same duplicate-collapsed vectors, same seed) give a
    bit-identical graph: levels come from a seeded generator, insertion is
    serial, and every tie breaks on ascending node id.
    """

    def __init__(self, dim: int, m_graph: int = 16, ef_construction: int = 200, seed: int = 0):
        self.dim = dim
        self.m_graph = m_graph
        self.ef_construction = ef_construction
        self.seed = seed
        self.vectors = np.zeros((0, dim), dtype=np.float32)
        self.payloads: List[list] = []  # per node: payload tuples, insertion order
        self.levels: List[int] = []
        self.neighbors: List[List[List[int]]] = []  # node -> layer -> sorted neighbor ids
        self.entry_point = -1
        self.max_level = -1
        self._ml = 1.0 / math.log(m_graph)

    # -- distance helpers ----------------------------------------------------

    def _dist(self, q: np.ndarray, node: int) -> float:
        diff = self.vectors[node].astype(np.float64) - q
        return float(diff @ diff)

    def _dists(self, q: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
        v = self.vectors[np.asarray(nodes, dtype=np.int64)].astype(np.float64)
        diff = v - q
        return (diff * diff).sum(axis=1)

    # -- construction ----------------------------------------------------------

    @classmethod
    def build(
        cls,
        vectors: np.ndarray,
        payloads: Sequence,
        m_graph: int = 16,
        ef_construction: int = 200,
        seed: int = 0,
    ) -> "HnswGraph":
        """Collapse duplicate vectors into one node each, then insert serially."""
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise EmptyIndex("cannot build an HNSW graph over zero vectors")
        if len(payloads) != vectors.shape[0]:
            raise ValueError("payload count must match vector count")
        if not np.isfinite(vectors).all():
            raise ValueError("vectors must be finite")
        uniq, inverse = np.unique(vectors, axis=0, return_inverse=True)
        graph = cls(vectors.shape[1], m_graph, ef_construction, seed)
        graph.vectors = uniq
        graph.payloads = [[] for _ in range(uniq.shape[0])]
        for row, node in enumerate(inverse):
            graph.payloads[int(node)].append(payloads[row])
        rng = np.random.default_rng(seed)
        n = uniq.shape[0]
        graph.levels = [int(-math.log(max(rng.random(), 1e-300)) * graph._ml) for _ in range(n)]
        graph.neighbors = [
            [[] for _ in range(graph.levels[i] + 1)] for i in range(n)
        ]
        for node in range(n):
            graph._insert(node)
        return graph

    def _insert(self, node: int) -> None:
        level = self.levels[node]
        if self.entry_point < 0:
            self.entry_point = node
            self.max_level = level
            return
        q = self.vectors[node].astype(np.float64)
        cur = self.entry_point
        cur_dist = self._dist(q, cur)
        for layer in range(self.max_level, level, -1):
            cur, cur_dist = self._greedy_step(q, cur, cur_dist, layer)
        eps = [(cur_dist, cur)]
        for layer in range(min(level, self.max_level), -1, -1):
            cands = self._search_layer(q, eps, self.ef_construction, layer)
            m_max = self.m_graph * 2 if layer == 0 else self.m_graph
            chosen = [n_ for _, n_ in cands[: self.m_graph]]
            self.neighbors[node][layer] = sorted(chosen)
            for d, nb in cands[: self.m_graph]:
                lst = self.neighbors[nb][layer]
                lst.append(node)
                if len(lst) > m_max:
                    nd = self._dists(self.vectors[nb].astype(np.float64), lst)
                    keep = sorted(zip(nd, lst))[:m_max]
                    self.neighbors[nb][layer] = sorted(n_ for _, n_ in keep)
                else:
                    lst.sort()
            eps = cands
        if level > self.max_level:
            self.entry_point = node
            self.max_level = level

    def _greedy_step(self, q: np.ndarray, cur: int, cur_dist: float, layer: int):
        while True:
            nbs = self.neighbors[cur][layer] if layer < len(self.neighbors[cur]) else []
            if not nbs:
                return cur, cur_dist
            d = self._dists(q, nbs)
            best = int(np.argmin(d))
            if d[best] < cur_dist:
                cur, cur_dist = nbs[best], float(d[best])
            else:
                return cur, cur_dist

    def _search_layer(self, q: np.ndarray, entry_points, ef: int, layer: int) -> list:
        """Best-first beam search; returns up to ef (dist, node) ascending."""
        visited = set()
        candidates: list = []  # min-heap of (dist, node)
        results: list = []  # max-heap via negated dist
        for d, n_ in entry_points:
            if n_ in visited:
                continue
            visited.add(n_)
            heapq.heappush(candidates, (d, n_))
            heapq.heappush(results, (-d, n_))
        while candidates:
            d, n_ = heapq.heappop(candidates)
            worst = -results[0][0]
            if d > worst and len(results) >= ef:
                break
            nbs = [x for x in self.neighbors[n_][layer] if x not in visited] if layer < len(self.neighbors[n_]) else []
            if not nbs:
                continue
            visited.update(nbs)
            nd = self._dists(q, nbs)
            for dist, nb in zip(nd, nbs):
                worst = -results[0][0]
                if len(results) < ef or dist < worst:
                    heapq.heappush(candidates, (float(dist), nb))
                    heapq.heappush(results, (-float(dist), nb))
                    if len(results) > ef:
                        heapq.heappop(results)
        out = sorted((-d, n_) for d, n_ in results)
        return [(d, n_) for d, n_ in out]

    # -- search ----------------------------------------------------------------

    def search(self, query: np.ndarray, top_n: int, ef_search: int = 64) -> list:
        """Approximate top_n payload entries ascending by distance.

        Duplicate vectors share a node, so a node's payloads expand in insertion
        order at the node's distance.
        """
        if self.entry_point < 0:
            raise EmptyIndex("search on an empty HNSW graph")
        q = np.asarray(query, dtype=np.float64)
        cur = self.entry_point
        cur_dist = self._dist(q, cur)
        for layer in range(self.max_level, 0, -1):
            cur, cur_dist = self._greedy_step(q, cur, cur_dist, layer)
        ef = max(ef_search, top_n)
        cands = self._search_layer(q, [(cur_dist, cur)], ef, 0)
        out = []
        for d, node in cands:
            for payload in self.payloads[node]:
                out.append((payload, float(d)))
                if len(out) >= top_n:
                    return out
        return out

    @property
    def num_nodes(self) -> int:
        return len(self.levels)


def build_hnsw(
    vectors: np.ndarray,
    payloads: Sequence,
    m_graph: int = 16,
    ef_construction: int = 200,
    seed: int = 0,
) -> HnswGraph:
    return HnswGraph.build(vectors, payloads, m_graph, ef_construction, seed)


def hnsw_search(graph: HnswGraph, query: np.ndarray, top_n: int, ef_search: int = 64) -> list:
    return graph.search(query, top_n, ef_search)


def hnsw_candidates(
    graph: HnswGraph,
    query_patches: np.ndarray,  # (Q', D) retained query patch vectors
    attention: np.ndarray,
    per_patch_hits: int,
    r: int,
    ef_search: int = 64,
) -> list:
    """Graph-searched analogue of postings_candidates; payloads are (doc_id, patch)."""
    scores: dict = {}
    hit: set = set()
    for i in range(query_patches.shape[0]):
        found = graph.search(query_patches[i], per_patch_hits, ef_search)
        docs = {payload[0] for payload, _ in found}
        for doc_id in docs:
            scores[doc_id] = scores.get(doc_id, 0.0) + float(attention[i])
            hit.add(doc_id)
    ordered = sorted(hit, key=lambda d: (-scores[d], d))
    return [int(d) for d in ordered[:r]]
