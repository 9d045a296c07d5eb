"""Quantized multi-vector document retrieval.

Patch embeddings are compressed to centroid codes via a trained K-Means
codebook, queries are pruned to their most salient patches, candidates come
from centroid postings / an HNSW graph / bit-packed Hamming scans, and final
ranking is late-interaction MaxSim through a query-to-centroid lookup table.
"""

from .engine import EngineConfig, build_index, query, query_batch
from .model import Codebook, PatchMatrix, QuantizedDocument, RankedResult, RetrievalIndex, validate
from .pruner import PruneConfig, compute_budget, prune
from .quantizer import KMeansConfig, assign, assign_batch, decode, train

__all__ = [
    "Codebook",
    "EngineConfig",
    "KMeansConfig",
    "PatchMatrix",
    "PruneConfig",
    "QuantizedDocument",
    "RankedResult",
    "RetrievalIndex",
    "assign",
    "assign_batch",
    "build_index",
    "compute_budget",
    "decode",
    "prune",
    "query",
    "query_batch",
    "train",
    "validate",
]

__version__ = "0.1.0"
