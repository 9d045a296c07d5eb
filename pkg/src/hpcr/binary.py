"""Bit-packed binary codes and Hamming-distance kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BitsMismatch, CodeOverflow
from .model import Codebook

# Popcount lookup for 16-bit values; codes are at most 16 bits wide.
_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.uint8)


def bits_for(k: int) -> int:
    """Bits needed per code: ceil(log2 K)."""
    if k < 2:
        raise ValueError(f"K must be >= 2, got {k}")
    return (k - 1).bit_length()


@dataclass(frozen=True)
class PackedCodes:
    """Codes packed LSB-first into a contiguous bit stream, no per-code padding."""

    bits_per_code: int
    num_codes: int
    data: bytes

    def __post_init__(self):
        expected = (self.num_codes * self.bits_per_code + 7) // 8
        if len(self.data) != expected:
            raise ValueError(f"packed length {len(self.data)} != expected {expected}")


def pack(codes, b: int) -> PackedCodes:
    codes = np.asarray(codes, dtype=np.uint32)
    if codes.ndim != 1:
        raise ValueError("codes must be a 1-D sequence")
    if not 1 <= b <= 16:
        raise ValueError(f"bits per code must be in [1, 16], got {b}")
    if codes.size and int(codes.max()) >= (1 << b):
        bad = int(codes.max())
        raise CodeOverflow(f"code {bad} does not fit in {b} bits")
    m = codes.size
    bits = ((codes[:, None] >> np.arange(b, dtype=np.uint32)) & 1).astype(np.uint8)
    packed = np.packbits(bits.ravel(), bitorder="little")
    return PackedCodes(b, m, packed.tobytes())


def unpack(pc: PackedCodes) -> np.ndarray:
    b, m = pc.bits_per_code, pc.num_codes
    bits = np.unpackbits(np.frombuffer(pc.data, dtype=np.uint8), bitorder="little", count=m * b)
    weights = (1 << np.arange(b, dtype=np.uint32))
    return (bits.reshape(m, b).astype(np.uint32) * weights).sum(axis=1).astype(np.uint16)


def hamming(a: int, b2: int) -> int:
    """Popcount of XOR."""
    return int(a ^ b2).bit_count()


def hamming_many(query_code: int, codes: np.ndarray) -> np.ndarray:
    """Vectorized Hamming distance from one code to an array of uint16 codes."""
    x = np.bitwise_xor(codes.astype(np.uint16), np.uint16(query_code))
    return _POPCOUNT16[x]


def hamming_scan(query_code: int, pc: PackedCodes, top_n: int) -> list:
    """Smallest-distance patches first, ties by ascending patch index.

    Returns at most min(top_n, num_codes) (patch index, distance) pairs.
    """
    if query_code >= (1 << pc.bits_per_code):
        raise BitsMismatch(f"query code {query_code} wider than {pc.bits_per_code} bits")
    codes = unpack(pc)
    d = hamming_many(query_code, codes)
    n = min(top_n, pc.num_codes)
    # lexsort's last key is primary: sort by distance, then patch index.
    order = np.lexsort((np.arange(pc.num_codes), d))[:n]
    return [(int(i), int(d[i])) for i in order]


def locality_order(cb: Codebook) -> np.ndarray:
    """Greedy nearest-neighbor chain over centroids.

    Returns a permutation perm where perm[new_label] = old_label, so consecutive
    new labels are embedding-near. Used to give Hamming-near code labels some
    geometric meaning before binary encoding.
    """
    c = cb.centroids.astype(np.float64)
    k = cb.k
    remaining = np.ones(k, dtype=bool)
    perm = np.empty(k, dtype=np.int64)
    cur = 0
    remaining[cur] = False
    perm[0] = cur
    for i in range(1, k):
        d2 = ((c - c[cur]) ** 2).sum(axis=1)
        d2[~remaining] = np.inf
        cur = int(np.argmin(d2))
        remaining[cur] = False
        perm[i] = cur
    return perm
