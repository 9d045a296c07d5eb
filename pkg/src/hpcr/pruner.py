"""Attention-guided dynamic pruning: keep the top ceil(M*p) most salient patches."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import PatchMatrix

PRUNE_SIDES = ("query", "doc", "both")


@dataclass(frozen=True)
class PruneConfig:
    p: float = 1.0  # retention fraction in (0, 1]
    side: str = "query"

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"retention fraction p must be in (0, 1], got {self.p}")
        if self.side not in PRUNE_SIDES:
            raise ValueError(f"side must be one of {PRUNE_SIDES}, got {self.side!r}")


def compute_budget(m: int, p: float) -> int:
    """Number of patches to keep: ceil(M*p), clamped to [1, M]."""
    if m < 1:
        raise ValueError("patch count must be >= 1")
    # 1e-9 slack keeps exact products like 50*0.6 from ceiling up a ulp.
    budget = math.ceil(m * p - 1e-9)
    return min(m, max(1, budget))


def prune(pm: PatchMatrix, cfg: PruneConfig) -> PatchMatrix:
    """Keep the budget patches with the largest attention, original order preserved.

    Attention ties break toward the smaller original patch index.
    """
    m = pm.num_patches
    budget = compute_budget(m, cfg.p)
    if budget == m:
        return pm
    # Stable sort on negated weights: equal weights keep ascending index order.
    order = np.argsort(-pm.attention, kind="stable")[:budget]
    keep = np.sort(order)
    return PatchMatrix(pm.doc_id, pm.patches[keep], pm.attention[keep])
