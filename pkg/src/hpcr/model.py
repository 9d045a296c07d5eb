"""Core domain types: patch matrices, codebooks, quantized documents, indexes, rankings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CodeOutOfRange, DimensionMismatch, NonFiniteValue

SIMILARITY_MODES = ("cosine", "dot", "l2")

# Rows whose norm is already this close to 1 are left untouched so that
# validate(validate(x)) is bit-identical to validate(x). Must exceed the
# float32 round-off of a freshly normalized row (~1e-7) with margin, and
# stay below the 1e-5 unit-norm invariant.
_NORM_SKIP_TOL = 4e-6


def _check_mode(mode: str) -> str:
    if mode not in SIMILARITY_MODES:
        raise ValueError(f"unknown similarity mode {mode!r}, expected one of {SIMILARITY_MODES}")
    return mode


@dataclass(frozen=True)
class PatchMatrix:
    """One document (or query): M patch embeddings of dimension D plus per-patch salience."""

    doc_id: int
    patches: np.ndarray  # (M, D) float32
    attention: np.ndarray  # (M,) float32, non-negative

    def __post_init__(self):
        patches = np.ascontiguousarray(self.patches, dtype=np.float32)
        attention = np.ascontiguousarray(self.attention, dtype=np.float32)
        if patches.ndim != 2 or patches.shape[0] < 1 or patches.shape[1] < 1:
            raise DimensionMismatch(f"patches must be a non-empty 2-D matrix, got shape {patches.shape}")
        if attention.ndim != 1 or attention.shape[0] != patches.shape[0]:
            raise DimensionMismatch(
                f"attention length {attention.shape[0] if attention.ndim == 1 else attention.shape} "
                f"does not match patch count {patches.shape[0]}"
            )
        patches.flags.writeable = False
        attention.flags.writeable = False
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "attention", attention)

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]


def validate(pm: PatchMatrix, mode: str = "cosine") -> PatchMatrix:
    """Check finiteness/shape and, in cosine mode, unit-normalize rows.

    Idempotent: rows already close enough to unit norm are returned bit-exactly.
    """
    _check_mode(mode)
    if not np.isfinite(pm.patches).all():
        bad = np.argwhere(~np.isfinite(pm.patches))[0]
        raise NonFiniteValue(int(bad[0]), int(bad[1]))
    if not np.isfinite(pm.attention).all():
        bad = int(np.argwhere(~np.isfinite(pm.attention))[0][0])
        raise NonFiniteValue(bad, -1)
    if (pm.attention < 0).any():
        bad = int(np.argwhere(pm.attention < 0)[0][0])
        raise ValueError(f"negative attention weight at patch {bad}")
    if mode != "cosine":
        return pm
    norms = np.linalg.norm(pm.patches.astype(np.float64), axis=1)
    if (norms == 0).any():
        bad = int(np.argwhere(norms == 0)[0][0])
        raise ValueError(f"zero-norm patch row {bad} cannot be cosine-normalized")
    needs = np.abs(norms - 1.0) > _NORM_SKIP_TOL
    if not needs.any():
        return pm
    patches = pm.patches.astype(np.float64)
    patches[needs] /= norms[needs, None]
    return PatchMatrix(pm.doc_id, patches.astype(np.float32), pm.attention)


@dataclass(frozen=True)
class Codebook:
    """K learned centroids defining the quantization vocabulary."""

    centroids: np.ndarray  # (K, D) float32
    similarity_mode: str = "cosine"
    training_seed: int = 0

    def __post_init__(self):
        _check_mode(self.similarity_mode)
        centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if centroids.ndim != 2:
            raise DimensionMismatch("centroids must be a 2-D matrix")
        k = centroids.shape[0]
        if not 2 <= k <= 65536:
            raise ValueError(f"K={k} outside supported range [2, 65536]")
        if not np.isfinite(centroids).all():
            bad = np.argwhere(~np.isfinite(centroids))[0]
            raise NonFiniteValue(int(bad[0]), int(bad[1]))
        centroids.flags.writeable = False
        object.__setattr__(self, "centroids", centroids)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def code_bytes(self) -> int:
        """Stored bytes per code: 1 for K <= 256, else 2."""
        return 1 if self.k <= 256 else 2


@dataclass(frozen=True)
class QuantizedDocument:
    """Per-document sequence of centroid codes, optionally bit-packed."""

    doc_id: int
    codes: np.ndarray  # (M,) uint16
    packed_binary: Optional["PackedCodes"] = None  # set by engine when binary mode on

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.uint16)
        if codes.ndim != 1 or codes.shape[0] < 1:
            raise DimensionMismatch("codes must be a non-empty 1-D sequence")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)

    @property
    def num_patches(self) -> int:
        return self.codes.shape[0]

    def check_codes(self, k: int) -> None:
        if int(self.codes.max()) >= k:
            raise CodeOutOfRange(f"doc {self.doc_id} has code {int(self.codes.max())} >= K={k}")


@dataclass(frozen=True)
class RankedResult:
    """Ordered (doc_id, score) list, scores non-increasing, ties by ascending doc_id."""

    entries: tuple  # tuple of (doc_id, score)

    def __post_init__(self):
        entries = tuple((int(d), float(s)) for d, s in self.entries)
        seen = set()
        for i, (doc_id, score) in enumerate(entries):
            if doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc_id} in ranking")
            seen.add(doc_id)
            if i > 0:
                prev_id, prev_score = entries[i - 1]
                if score > prev_score:
                    raise ValueError("scores must be non-increasing")
                if score == prev_score and doc_id < prev_id:
                    raise ValueError("ties must be broken by ascending doc_id")
        object.__setattr__(self, "entries", entries)

    def doc_ids(self) -> list:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def ranked_from_scores(doc_ids: Sequence[int], scores: Sequence[float], top_k: Optional[int] = None) -> RankedResult:
    """Sort (doc_id, score) pairs descending by score, ties ascending by doc_id."""
    pairs = sorted(zip(doc_ids, scores), key=lambda e: (-e[1], e[0]))
    if top_k is not None:
        pairs = pairs[:top_k]
    return RankedResult(tuple(pairs))


@dataclass(frozen=True)
class RetrievalIndex:
    """Persisted corpus: codebook, per-doc codes, candidate structure, config. Immutable."""

    codebook: Codebook
    documents: tuple  # tuple of QuantizedDocument
    candidate_structure: object  # CentroidPostings | HnswGraph | HammingScan
    build_config: object  # EngineConfig
    doc_attention: Optional[tuple] = None  # per-doc float32 arrays, when doc-side pruning on

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        if self.doc_attention is not None:
            object.__setattr__(self, "doc_attention", tuple(self.doc_attention))

    @property
    def num_docs(self) -> int:
        return len(self.documents)

    @property
    def doc_ids(self) -> list:
        return [d.doc_id for d in self.documents]
