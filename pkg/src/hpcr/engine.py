"""Offline index build and the online prune -> search -> rerank query pipeline."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import ann, binary, pruner, quantizer, scorer
from .errors import DimensionMismatch, EmptyCorpus, EmptyIndex
from .model import PatchMatrix, RankedResult, RetrievalIndex, validate
from .pruner import PruneConfig
from .quantizer import KMeansConfig

CANDIDATE_MODES = ("postings", "hnsw", "hamming")


@dataclass(frozen=True)
class EngineConfig:
    kmeans: KMeansConfig = field(default_factory=lambda: KMeansConfig(k=256))
    prune: PruneConfig = field(default_factory=PruneConfig)
    similarity_mode: str = "cosine"
    candidate_mode: str = "postings"
    c_nearest: int = 4
    r_candidates: int = 100
    top_k: int = 10
    binary_enabled: bool = False
    locality_ordering: bool = False
    symmetric_quantize: bool = False
    train_sample_fraction: float = 1.0
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 64

    def __post_init__(self):
        if self.candidate_mode not in CANDIDATE_MODES:
            raise ValueError(f"candidate_mode must be one of {CANDIDATE_MODES}")
        if self.candidate_mode == "hamming" and not self.binary_enabled:
            raise ValueError("hamming candidate mode requires binary_enabled")
        if not 0.0 < self.train_sample_fraction <= 1.0:
            raise ValueError("train_sample_fraction must be in (0, 1]")
        if self.c_nearest < 1 or self.r_candidates < 1 or self.top_k < 1:
            raise ValueError("c_nearest, r_candidates, and top_k must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        d["kmeans"] = KMeansConfig(**d["kmeans"])
        d["prune"] = PruneConfig(**d["prune"])
        return cls(**d)


@dataclass
class TimingRecord:
    total_s: float = 0.0
    prune_s: float = 0.0
    candidates_s: float = 0.0
    rerank_s: float = 0.0
    latencies_s: list = field(default_factory=list)

    @property
    def stage_sum_s(self) -> float:
        return self.prune_s + self.candidates_s + self.rerank_s


def build_index(corpus: Iterable[PatchMatrix], cfg: EngineConfig) -> RetrievalIndex:
    docs_in = [validate(pm, cfg.similarity_mode) for pm in corpus]
    if not docs_in:
        raise EmptyCorpus("cannot build an index over an empty corpus")
    dim = docs_in[0].dim
    for pm in docs_in:
        if pm.dim != dim:
            raise DimensionMismatch(f"doc {pm.doc_id} dim {pm.dim} != corpus dim {dim}")

    doc_attention = None
    if cfg.prune.side in ("doc", "both"):
        docs_in = [pruner.prune(pm, cfg.prune) for pm in docs_in]
        doc_attention = tuple(pm.attention for pm in docs_in)

    points = np.vstack([pm.patches for pm in docs_in])
    if cfg.train_sample_fraction < 1.0:
        rng = np.random.default_rng(cfg.kmeans.seed)
        n = max(cfg.kmeans.k, int(points.shape[0] * cfg.train_sample_fraction))
        idx = np.sort(rng.choice(points.shape[0], size=min(n, points.shape[0]), replace=False))
        points = points[idx]
    codebook = quantizer.train(points, cfg.kmeans, cfg.similarity_mode)

    if cfg.locality_ordering:
        # Relabel centroids along a nearest-neighbor chain before assignment so
        # that Hamming-near code labels tend to be embedding-near.
        perm = binary.locality_order(codebook)
        codebook = replace(codebook, centroids=codebook.centroids[perm])

    bits = binary.bits_for(codebook.k) if cfg.binary_enabled else 0
    documents = []
    for pm in docs_in:
        qd = quantizer.assign_batch(codebook, pm)
        if cfg.binary_enabled:
            packed = binary.pack(qd.codes, bits)
            qd = replace(qd, packed_binary=packed)
        documents.append(qd)

    structure = _build_candidate_structure(documents, codebook, cfg)
    return RetrievalIndex(codebook, tuple(documents), structure, cfg, doc_attention)


def _build_candidate_structure(documents, codebook, cfg: EngineConfig):
    if cfg.candidate_mode == "postings":
        return ann.build_postings(documents, codebook.k)
    if cfg.candidate_mode == "hamming":
        return ann.build_hamming_scan(documents, binary.bits_for(codebook.k))
    vectors = np.vstack([codebook.centroids[d.codes] for d in documents])
    payloads = [
        (d.doc_id, p) for d in documents for p in range(d.num_patches)
    ]
    return ann.build_hnsw(
        vectors, payloads, cfg.hnsw_m, cfg.hnsw_ef_construction, cfg.kmeans.seed
    )


def _doc_map(index: RetrievalIndex) -> dict:
    cached = getattr(index, "_doc_map_cache", None)
    if cached is None:
        cached = {d.doc_id: d for d in index.documents}
        object.__setattr__(index, "_doc_map_cache", cached)
    return cached


def query(
    index: RetrievalIndex,
    query_pm: PatchMatrix,
    top_k: Optional[int] = None,
    prune_p: Optional[float] = None,
    c_nearest: Optional[int] = None,
    r_candidates: Optional[int] = None,
    ef_search: Optional[int] = None,
    counter: Optional[scorer.ScoreCounter] = None,
    timings: Optional[TimingRecord] = None,
) -> RankedResult:
    cfg: EngineConfig = index.build_config
    if index.num_docs == 0:
        raise EmptyIndex("query against an empty index")
    cb = index.codebook
    qpm = validate(query_pm, cfg.similarity_mode)
    if qpm.dim != cb.dim:
        raise DimensionMismatch(f"query dim {qpm.dim} != index dim {cb.dim}")

    top_k = cfg.top_k if top_k is None else top_k
    c_near = cfg.c_nearest if c_nearest is None else c_nearest
    r = cfg.r_candidates if r_candidates is None else r_candidates
    ef = cfg.hnsw_ef_search if ef_search is None else ef_search

    t0 = time.perf_counter()
    if cfg.prune.side in ("query", "both") or prune_p is not None:
        p = cfg.prune.p if prune_p is None else prune_p
        qpm = pruner.prune(qpm, PruneConfig(p, cfg.prune.side))
    t1 = time.perf_counter()

    score_query = qpm
    if cfg.symmetric_quantize:
        qcodes = quantizer.assign_many(cb, qpm.patches)
        score_query = PatchMatrix(qpm.doc_id, cb.centroids[qcodes], qpm.attention)
    lut = scorer.build_lut(score_query, cb)

    if cfg.candidate_mode == "postings":
        cand_ids = ann.postings_candidates(
            index.candidate_structure, lut.values, qpm.attention, c_near, r
        )
    elif cfg.candidate_mode == "hamming":
        qcodes = quantizer.assign_many(cb, qpm.patches)
        cand_ids = ann.hamming_candidates(
            index.candidate_structure, qcodes, qpm.attention, per_patch_hits=r, r=r
        )
    else:
        cand_ids = ann.hnsw_candidates(
            index.candidate_structure, qpm.patches, qpm.attention,
            per_patch_hits=r, r=r, ef_search=ef,
        )
    t2 = time.perf_counter()

    docs = _doc_map(index)
    result = scorer.rerank(lut, (docs[d] for d in cand_ids), top_k, counter)
    t3 = time.perf_counter()

    if timings is not None:
        timings.prune_s += t1 - t0
        timings.candidates_s += t2 - t1
        timings.rerank_s += t3 - t2
        timings.latencies_s.append(t3 - t0)
    return result


def query_batch(
    index: RetrievalIndex,
    queries: Sequence[PatchMatrix],
    counter: Optional[scorer.ScoreCounter] = None,
    **overrides,
):
    """Sequential batch execution with per-stage timing. Results match query()."""
    timings = TimingRecord()
    t0 = time.perf_counter()
    results = [
        query(index, q, counter=counter, timings=timings, **overrides) for q in queries
    ]
    timings.total_s = time.perf_counter() - t0
    return results, timings
