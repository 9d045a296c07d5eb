"""Late-interaction MaxSim scoring through a query-to-centroid lookup table."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import CodeOutOfRange, DimensionMismatch
from .model import Codebook, PatchMatrix, QuantizedDocument, RankedResult, ranked_from_scores


@dataclass
class ScoreCounter:
    """Counts query-patch x doc-patch similarity evaluations."""

    similarity_evaluations: int = 0

    def add(self, n: int) -> None:
        self.similarity_evaluations += n


@dataclass(frozen=True)
class SimLUT:
    """Q' x K similarities of each retained query patch against every centroid."""

    values: np.ndarray  # (Q', K) float64
    similarity_mode: str

    @property
    def num_query_patches(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


def similarity_matrix(queries: np.ndarray, targets: np.ndarray, mode: str) -> np.ndarray:
    """Pairwise similarity in float64. cosine: normalized dot; dot: raw; l2: -squared distance."""
    q = np.asarray(queries, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if q.shape[1] != t.shape[1]:
        raise DimensionMismatch(f"dim {q.shape[1]} vs {t.shape[1]}")
    if mode == "cosine":
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        tn = t / np.linalg.norm(t, axis=1, keepdims=True)
        return qn @ tn.T
    if mode == "dot":
        return q @ t.T
    # l2: negate squared distance so max/argmax semantics match the other modes.
    d2 = (q ** 2).sum(axis=1)[:, None] - 2.0 * (q @ t.T) + (t ** 2).sum(axis=1)[None, :]
    return -np.maximum(d2, 0.0)


def build_lut(query: PatchMatrix, cb: Codebook) -> SimLUT:
    if query.dim != cb.dim:
        raise DimensionMismatch(f"query dim {query.dim} != codebook dim {cb.dim}")
    values = similarity_matrix(query.patches, cb.centroids, cb.similarity_mode)
    return SimLUT(values, cb.similarity_mode)


def maxsim(lut: SimLUT, doc: QuantizedDocument, counter: Optional[ScoreCounter] = None) -> float:
    """Sum over query patches of the max LUT similarity over the doc's codes."""
    codes = doc.codes
    if int(codes.max()) >= lut.k:
        raise CodeOutOfRange(f"doc {doc.doc_id} has code >= K={lut.k}")
    if counter is not None:
        counter.add(lut.num_query_patches * doc.num_patches)
    return float(lut.values[:, codes].max(axis=1).sum())


def maxsim_naive(query: PatchMatrix, cb: Codebook, doc: QuantizedDocument) -> float:
    """Decode-and-double-loop reference: no LUT, per-pair similarity."""
    decoded = cb.centroids[doc.codes]
    sims = similarity_matrix(query.patches, decoded, cb.similarity_mode)
    return float(sims.max(axis=1).sum())


def rerank(
    lut: SimLUT,
    candidates: Iterable[QuantizedDocument],
    top_k: int,
    counter: Optional[ScoreCounter] = None,
) -> RankedResult:
    """MaxSim-score the candidates and keep the best top_k."""
    doc_ids, scores = [], []
    for doc in candidates:
        doc_ids.append(doc.doc_id)
        scores.append(maxsim(lut, doc, counter))
    return ranked_from_scores(doc_ids, scores, top_k)
