"""Retrieval-quality metrics, synthetic corpus generation, and benchmarking."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import engine, scorer, storage
from .errors import NoRelevantDocs
from .model import PatchMatrix, RankedResult, RetrievalIndex, ranked_from_scores


# ---------------------------------------------------------------------------
# Quality metrics (ranking = ordered doc_id list, qrels = {doc_id: relevance})
# ---------------------------------------------------------------------------


def _relevant(qrels: Dict[str, int]) -> Dict[str, int]:
    return {d: r for d, r in qrels.items() if r > 0}


def ndcg_at_k(ranking: Sequence, qrels: Dict, k: int = 10) -> float:
    rel = _relevant(qrels)
    if not rel:
        raise NoRelevantDocs("query has no relevant documents")
    dcg = 0.0
    for rank, doc_id in enumerate(ranking[:k], 1):
        gain = qrels.get(doc_id, 0)
        if gain > 0:
            dcg += gain / math.log2(rank + 1)
    ideal = sorted(rel.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(r + 1) for r, g in enumerate(ideal, 1))
    return dcg / idcg


def recall_at_k(ranking: Sequence, qrels: Dict, k: int = 10) -> float:
    rel = _relevant(qrels)
    if not rel:
        raise NoRelevantDocs("query has no relevant documents")
    hits = sum(1 for doc_id in ranking[:k] if doc_id in rel)
    return hits / len(rel)


def average_precision(ranking: Sequence, qrels: Dict) -> float:
    rel = _relevant(qrels)
    if not rel:
        raise NoRelevantDocs("query has no relevant documents")
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranking, 1):
        if doc_id in rel:
            hits += 1
            total += hits / rank
    return total / len(rel)


def mean_average_precision(rankings: Dict, qrels: Dict) -> float:
    """rankings: {query_id: ordered doc ids}; queries with no relevant docs excluded."""
    aps = []
    for qid, ranking in rankings.items():
        q = qrels.get(qid, {})
        if not _relevant(q):
            continue
        aps.append(average_precision(ranking, q))
    if not aps:
        raise NoRelevantDocs("no query has relevant documents")
    return sum(aps) / len(aps)


def quality_summary(rankings: Dict, qrels: Dict, k: int = 10) -> dict:
    """Mean nDCG@k / Recall@k / MAP over queries that have relevant docs."""
    ndcgs, recalls, aps, skipped = [], [], [], []
    per_query = {}
    for qid, ranking in rankings.items():
        q = qrels.get(qid, {})
        if not _relevant(q):
            skipped.append(qid)
            continue
        ndcg = ndcg_at_k(ranking, q, k)
        ndcgs.append(ndcg)
        per_query[qid] = ndcg
        recalls.append(recall_at_k(ranking, q, k))
        aps.append(average_precision(ranking, q))
    if not ndcgs:
        raise NoRelevantDocs("no query has relevant documents")
    return {
        "k": k,
        "num_queries": len(ndcgs),
        "num_queries_without_relevant": len(skipped),
        f"ndcg@{k}": sum(ndcgs) / len(ndcgs),
        f"recall@{k}": sum(recalls) / len(recalls),
        "map": sum(aps) / len(aps),
        "per_query_ndcg": per_query,
    }


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    num_docs: int = 100
    patches_per_doc: int = 50
    dim: int = 64
    num_topics: int = 16
    cluster_stddev: float = 0.05
    attention_temperature: float = 1.0
    num_queries: int = 20
    query_patches: int = 50
    max_topics_per_doc: int = 2
    seed: int = 0

    def __post_init__(self):
        if min(self.num_docs, self.patches_per_doc, self.dim, self.num_topics,
               self.num_queries, self.query_patches, self.max_topics_per_doc) < 1:
            raise ValueError("all counts must be >= 1")
        if self.cluster_stddev <= 0:
            raise ValueError("cluster_stddev must be positive")
        if self.attention_temperature <= 0:
            raise ValueError("attention_temperature must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


@dataclass
class SyntheticData:
    corpus: list  # PatchMatrix per doc
    queries: list  # PatchMatrix per query (doc_id is the query id)
    qrels: dict  # {query_id(str): {doc_id(str): rel}}
    doc_topics: list  # topic list per doc, dominant topic first
    query_topics: list  # topic list per query, dominant topic first


def _softmax(x: np.ndarray, temperature: float) -> np.ndarray:
    z = x / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _topic_patches(rng, topics, counts, centers, stddev, dim):
    rows, labels = [], []
    for topic, cnt in zip(topics, counts):
        pts = centers[topic] + rng.normal(0.0, stddev, size=(cnt, dim))
        rows.append(pts)
        labels.extend([topic] * cnt)
    pts = np.vstack(rows)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts.astype(np.float32), labels


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Topic-cluster corpus: a doc is relevant to a query iff they share a
    generating topic (rel=1), rel=2 when the dominant topics match."""
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, 1.0, size=(spec.num_topics, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    corpus, doc_topics = [], []
    for i in range(spec.num_docs):
        n_topics = int(rng.integers(1, spec.max_topics_per_doc + 1))
        n_topics = min(n_topics, spec.num_topics)
        topics = rng.choice(spec.num_topics, size=n_topics, replace=False).tolist()
        # Dominant topic gets the larger share of patches.
        counts = _split_counts(spec.patches_per_doc, n_topics)
        patches, _ = _topic_patches(rng, topics, counts, centers, spec.cluster_stddev, spec.dim)
        attention = _softmax(rng.normal(0.0, 1.0, size=spec.patches_per_doc), spec.attention_temperature)
        corpus.append(PatchMatrix(i, patches, attention.astype(np.float32)))
        doc_topics.append(topics)

    queries, query_topics = [], []
    for qi in range(spec.num_queries):
        n_topics = int(rng.integers(1, 3))
        n_topics = min(n_topics, spec.num_topics)
        topics = rng.choice(spec.num_topics, size=n_topics, replace=False).tolist()
        counts = _split_counts(spec.query_patches, n_topics)
        patches, _ = _topic_patches(rng, topics, counts, centers, spec.cluster_stddev, spec.dim)
        attention = _softmax(rng.normal(0.0, 1.0, size=spec.query_patches), spec.attention_temperature)
        queries.append(PatchMatrix(qi, patches, attention.astype(np.float32)))
        query_topics.append(topics)

    qrels: dict = {}
    for qi, qt in enumerate(query_topics):
        qset = set(qt)
        rels = {}
        for di, dt in enumerate(doc_topics):
            if qset & set(dt):
                rels[str(di)] = 2 if qt[0] == dt[0] else 1
        qrels[str(qi)] = rels
    return SyntheticData(corpus, queries, qrels, doc_topics, query_topics)


def _split_counts(total: int, parts: int) -> list:
    """Partition total patches over topics, first (dominant) topic largest."""
    base = total // parts
    counts = [base] * parts
    counts[0] += total - base * parts
    if parts > 1 and counts[0] == counts[1]:
        # Keep the dominant topic strictly dominant when it can spare a patch.
        if counts[1] > 1:
            counts[0] += 1
            counts[1] -= 1
    return counts


# ---------------------------------------------------------------------------
# Brute-force float MaxSim baseline (no quantization, no candidate structure)
# ---------------------------------------------------------------------------


def bruteforce_float_ranking(
    corpus: Sequence[PatchMatrix],
    query: PatchMatrix,
    similarity_mode: str = "cosine",
    top_k: Optional[int] = None,
) -> RankedResult:
    """Exhaustive MaxSim over raw float patches; the quality/latency reference."""
    doc_ids, scores = [], []
    for pm in corpus:
        sims = scorer.similarity_matrix(query.patches, pm.patches, similarity_mode)
        doc_ids.append(pm.doc_id)
        scores.append(float(sims.max(axis=1).sum()))
    return ranked_from_scores(doc_ids, scores, top_k)


def bruteforce_quantized_ranking(
    index: RetrievalIndex,
    query: PatchMatrix,
    top_k: Optional[int] = None,
) -> RankedResult:
    """Exhaustive naive MaxSim over decoded centroids; oracle for the LUT pipeline."""
    cb = index.codebook
    doc_ids, scores = [], []
    for doc in index.documents:
        doc_ids.append(doc.doc_id)
        scores.append(scorer.maxsim_naive(query, cb, doc))
    return ranked_from_scores(doc_ids, scores, top_k)


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------


def _percentile(sorted_vals: list, q: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = min(len(sorted_vals) - 1, max(0, math.ceil(q * len(sorted_vals)) - 1))
    return sorted_vals[idx]


def bench(
    index: RetrievalIndex,
    queries: Sequence[PatchMatrix],
    qrels: Optional[dict] = None,
    warmup: int = 10,
    float_baseline_corpus: Optional[Sequence[PatchMatrix]] = None,
    **overrides,
) -> dict:
    """Timed query batch: latency percentiles, QPS, per-stage timings, counters,
    storage stats, optional quality metrics and float flat-scan baseline."""
    warm = min(warmup, len(queries))
    for q in queries[:warm]:
        engine.query(index, q, **overrides)
    counter = scorer.ScoreCounter()
    results, timings = engine.query_batch(index, queries, counter=counter, **overrides)
    lat = sorted(timings.latencies_s)
    mean_latency = sum(lat) / len(lat) if lat else 0.0
    report = {
        "num_queries": len(queries),
        "warmup_queries": warm,
        "threads": 1,
        "total_wall_s": timings.total_s,
        "qps": len(queries) / timings.total_s if timings.total_s > 0 else 0.0,
        "latency_mean_s": mean_latency,
        "latency_p50_s": _percentile(lat, 0.50),
        "latency_p95_s": _percentile(lat, 0.95),
        "latency_p99_s": _percentile(lat, 0.99),
        "stage_s": {
            "prune": timings.prune_s,
            "candidates": timings.candidates_s,
            "rerank": timings.rerank_s,
        },
        "similarity_evaluations": counter.similarity_evaluations,
        "storage": storage.storage_stats(index),
    }
    if qrels is not None:
        rankings = {str(q.doc_id): [str(d) for d in r.doc_ids()] for q, r in zip(queries, results)}
        report["quality"] = {
            k: v for k, v in quality_summary(rankings, qrels).items() if k != "per_query_ndcg"
        }
    if float_baseline_corpus is not None:
        t0 = time.perf_counter()
        mode = index.codebook.similarity_mode
        for q in queries:
            bruteforce_float_ranking(float_baseline_corpus, q, mode, top_k=index.build_config.top_k)
        baseline_total = time.perf_counter() - t0
        report["float_baseline_mean_latency_s"] = baseline_total / len(queries)
        report["float_baseline_total_s"] = baseline_total
    return report


def report_to_text(report: dict, prefix: str = "") -> str:
    """Flat 'key: value' rendering of a (possibly nested) report."""
    lines = []
    for key in report:
        val = report[key]
        if isinstance(val, dict):
            lines.append(report_to_text(val, prefix=f"{prefix}{key}."))
        else:
            lines.append(f"{prefix}{key}: {val}")
    return "\n".join(lines)


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
