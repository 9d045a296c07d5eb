"""Bit-exact file formats: embeddings, index, TREC qrels/run files, storage stats.

All multi-byte integers are little-endian. Both containers are versioned and
magic-checked; index sections carry CRC32 checksums.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np

from . import ann, binary
from .engine import EngineConfig
from .errors import (
    BadMagic,
    ChecksumMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from .model import Codebook, PatchMatrix, QuantizedDocument, RankedResult, RetrievalIndex

EMBEDDINGS_MAGIC = b"HPCE"
INDEX_MAGIC = b"HPCI"
FORMAT_VERSION = 1

_MODE_CODES = {"cosine": 0, "dot": 1, "l2": 2}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


# ---------------------------------------------------------------------------
# Embeddings file
# ---------------------------------------------------------------------------


def write_embeddings(path, docs: Iterable[PatchMatrix], similarity_mode: str = "cosine") -> None:
    docs = list(docs)
    dim = docs[0].dim if docs else 0
    with open(path, "wb") as f:
        f.write(EMBEDDINGS_MAGIC)
        f.write(struct.pack("<HIQB", FORMAT_VERSION, dim, len(docs), _MODE_CODES[similarity_mode]))
        for pm in docs:
            f.write(struct.pack("<QI", pm.doc_id, pm.num_patches))
            f.write(pm.patches.astype("<f4").tobytes())
            f.write(pm.attention.astype("<f4").tobytes())


class EmbeddingsReader:
    """Streaming reader; one document record in memory at a time."""

    def __init__(self, path):
        self.path = path
        with open(path, "rb") as f:
            header = f.read(19)
        if len(header) < 19:
            raise TruncatedFile("embeddings header incomplete", len(header))
        if header[:4] != EMBEDDINGS_MAGIC:
            raise BadMagic(f"expected magic {EMBEDDINGS_MAGIC!r}, found {header[:4]!r}")
        version, dim, count, mode = struct.unpack("<HIQB", header[4:19])
        if version != FORMAT_VERSION:
            raise VersionUnsupported(f"embeddings format version {version} unsupported", 4)
        if mode not in _MODE_NAMES:
            raise BadMagic(f"unknown similarity mode byte {mode}", 18)
        self.dim = dim
        self.num_docs = count
        self.similarity_mode = _MODE_NAMES[mode]

    def __iter__(self) -> Iterator[PatchMatrix]:
        with open(self.path, "rb") as f:
            f.seek(19)
            offset = 19
            for _ in range(self.num_docs):
                head = f.read(12)
                if len(head) < 12:
                    raise TruncatedFile("document record header incomplete", offset)
                doc_id, m = struct.unpack("<QI", head)
                need = m * self.dim * 4 + m * 4
                payload = f.read(need)
                if len(payload) < need:
                    raise TruncatedFile(
                        f"document {doc_id} payload incomplete", offset + 12 + len(payload)
                    )
                patches = np.frombuffer(payload, dtype="<f4", count=m * self.dim).reshape(m, self.dim)
                attention = np.frombuffer(payload, dtype="<f4", count=m, offset=m * self.dim * 4)
                yield PatchMatrix(doc_id, patches.copy(), attention.copy())
                offset += 12 + need


def read_embeddings(path) -> Tuple[List[PatchMatrix], str]:
    reader = EmbeddingsReader(path)
    return list(reader), reader.similarity_mode


def write_embeddings_jsonl(path, docs: Iterable[PatchMatrix]) -> None:
    """Text alternative for hand-written fixtures; one document per line."""
    with open(path, "w") as f:
        for pm in docs:
            rec = {
                "doc_id": pm.doc_id,
                "patches": [[float(v) for v in row] for row in pm.patches],
                "attention": [float(v) for v in pm.attention],
            }
            f.write(json.dumps(rec) + "\n")


def read_embeddings_jsonl(path) -> List[PatchMatrix]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(
                PatchMatrix(
                    rec["doc_id"],
                    np.array(rec["patches"], dtype=np.float32),
                    np.array(rec["attention"], dtype=np.float32),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Index file
# ---------------------------------------------------------------------------


def _write_section(f, name: str, payload: bytes) -> None:
    encoded = name.encode("ascii")
    f.write(struct.pack("<B", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
    f.write(payload)


def _read_section(f, offset: int):
    head = f.read(1)
    if not head:
        return None, offset
    name_len = head[0]
    name = f.read(name_len).decode("ascii")
    meta = f.read(12)
    if len(meta) < 12:
        raise TruncatedFile(f"section '{name}' header incomplete", offset + 1 + name_len)
    length, crc = struct.unpack("<QI", meta)
    payload = f.read(length)
    if len(payload) < length:
        raise TruncatedFile(f"section '{name}' payload incomplete", offset + 1 + name_len + 12)
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch(name)
    return (name, payload), offset + 1 + name_len + 12 + length


def _codebook_payload(cb: Codebook) -> bytes:
    head = struct.pack("<IIBQ", cb.k, cb.dim, _MODE_CODES[cb.similarity_mode], cb.training_seed)
    return head + cb.centroids.astype("<f4").tobytes()


def _parse_codebook(payload: bytes) -> Codebook:
    k, dim, mode, seed = struct.unpack("<IIBQ", payload[:17])
    centroids = np.frombuffer(payload, dtype="<f4", count=k * dim, offset=17).reshape(k, dim)
    return Codebook(centroids.copy(), _MODE_NAMES[mode], seed)


def _documents_payload(index: RetrievalIndex) -> bytes:
    cb = index.codebook
    cfg: EngineConfig = index.build_config
    bits = binary.bits_for(cb.k) if cfg.binary_enabled else 0
    buf = io.BytesIO()
    buf.write(struct.pack("<QBB", index.num_docs, cb.code_bytes, bits))
    dtype = "<u1" if cb.code_bytes == 1 else "<u2"
    for doc in index.documents:
        buf.write(struct.pack("<QI", doc.doc_id, doc.num_patches))
        buf.write(doc.codes.astype(dtype).tobytes())
        if bits:
            buf.write(struct.pack("<I", len(doc.packed_binary.data)))
            buf.write(doc.packed_binary.data)
    return buf.getvalue()


def _parse_documents(payload: bytes) -> list:
    count, code_bytes, bits = struct.unpack("<QBB", payload[:10])
    pos = 10
    dtype = "<u1" if code_bytes == 1 else "<u2"
    docs = []
    for _ in range(count):
        doc_id, m = struct.unpack("<QI", payload[pos : pos + 12])
        pos += 12
        codes = np.frombuffer(payload, dtype=dtype, count=m, offset=pos).astype(np.uint16)
        pos += m * code_bytes
        packed = None
        if bits:
            (plen,) = struct.unpack("<I", payload[pos : pos + 4])
            pos += 4
            packed = binary.PackedCodes(bits, m, payload[pos : pos + plen])
            pos += plen
        docs.append(QuantizedDocument(doc_id, codes, packed))
    return docs


def _attention_payload(doc_attention) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(doc_attention)))
    for att in doc_attention:
        buf.write(struct.pack("<I", att.shape[0]))
        buf.write(att.astype("<f4").tobytes())
    return buf.getvalue()


def _parse_attention(payload: bytes) -> tuple:
    (count,) = struct.unpack("<Q", payload[:8])
    pos = 8
    out = []
    for _ in range(count):
        (m,) = struct.unpack("<I", payload[pos : pos + 4])
        pos += 4
        out.append(np.frombuffer(payload, dtype="<f4", count=m, offset=pos).copy())
        pos += m * 4
    return tuple(out)


def _hnsw_payload(graph: ann.HnswGraph) -> bytes:
    buf = io.BytesIO()
    buf.write(
        struct.pack(
            "<IIIQqiQ",
            graph.dim,
            graph.m_graph,
            graph.ef_construction,
            graph.seed,
            graph.entry_point,
            graph.max_level,
            graph.num_nodes,
        )
    )
    buf.write(graph.vectors.astype("<f4").tobytes())
    buf.write(np.asarray(graph.levels, dtype="<u2").tobytes())
    for node in range(graph.num_nodes):
        for layer_list in graph.neighbors[node]:
            buf.write(struct.pack("<I", len(layer_list)))
            buf.write(np.asarray(layer_list, dtype="<i4").tobytes())
        buf.write(struct.pack("<I", len(graph.payloads[node])))
        for doc_id, patch in graph.payloads[node]:
            buf.write(struct.pack("<QI", doc_id, patch))
    return buf.getvalue()


def _parse_hnsw(payload: bytes) -> ann.HnswGraph:
    head = struct.calcsize("<IIIQqiQ")
    dim, m_graph, ef_c, seed, entry, max_level, n = struct.unpack("<IIIQqiQ", payload[:head])
    pos = head
    graph = ann.HnswGraph(dim, m_graph, ef_c, seed)
    graph.vectors = np.frombuffer(payload, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim).copy()
    pos += n * dim * 4
    graph.levels = np.frombuffer(payload, dtype="<u2", count=n, offset=pos).astype(int).tolist()
    pos += n * 2
    graph.entry_point = entry
    graph.max_level = max_level
    graph.neighbors = []
    graph.payloads = []
    for node in range(n):
        layers = []
        for _ in range(graph.levels[node] + 1):
            (cnt,) = struct.unpack("<I", payload[pos : pos + 4])
            pos += 4
            layers.append(np.frombuffer(payload, dtype="<i4", count=cnt, offset=pos).tolist())
            pos += cnt * 4
        graph.neighbors.append(layers)
        (cnt,) = struct.unpack("<I", payload[pos : pos + 4])
        pos += 4
        plist = []
        for _ in range(cnt):
            doc_id, patch = struct.unpack("<QI", payload[pos : pos + 12])
            pos += 12
            plist.append((doc_id, patch))
        graph.payloads.append(plist)
    return graph


_STRUCTURE_TAGS = {"postings": 0, "hnsw": 1, "hamming": 2}


def save_index(index: RetrievalIndex, path) -> None:
    cfg: EngineConfig = index.build_config
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        cfg_bytes = json.dumps(cfg.to_dict(), sort_keys=True).encode()
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        _write_section(f, "codebook", _codebook_payload(index.codebook))
        _write_section(f, "documents", _documents_payload(index))
        # Postings and Hamming structures are rebuilt deterministically from the
        # documents on load; only the HNSW graph is worth persisting.
        tag = _STRUCTURE_TAGS[cfg.candidate_mode]
        payload = struct.pack("<B", tag)
        if cfg.candidate_mode == "hnsw":
            payload += _hnsw_payload(index.candidate_structure)
        _write_section(f, "candidates", payload)
        if index.doc_attention is not None:
            _write_section(f, "attention", _attention_payload(index.doc_attention))


def load_index(path) -> RetrievalIndex:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != INDEX_MAGIC:
            raise BadMagic(f"expected magic {INDEX_MAGIC!r}, found {magic!r}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != FORMAT_VERSION:
            raise VersionUnsupported(f"index format version {version} unsupported", 4)
        (cfg_len,) = struct.unpack("<I", f.read(4))
        cfg = EngineConfig.from_dict(json.loads(f.read(cfg_len).decode()))
        sections = {}
        offset = 10 + cfg_len
        while True:
            item, offset = _read_section(f, offset)
            if item is None:
                break
            sections[item[0]] = item[1]
    for required in ("codebook", "documents", "candidates"):
        if required not in sections:
            raise TruncatedFile(f"missing section '{required}'", offset)
    codebook = _parse_codebook(sections["codebook"])
    documents = _parse_documents(sections["documents"])
    tag = sections["candidates"][0]
    if tag == _STRUCTURE_TAGS["postings"]:
        structure = ann.build_postings(documents, codebook.k)
    elif tag == _STRUCTURE_TAGS["hamming"]:
        structure = ann.build_hamming_scan(documents, binary.bits_for(codebook.k))
    else:
        structure = _parse_hnsw(sections["candidates"][1:])
    doc_attention = _parse_attention(sections["attention"]) if "attention" in sections else None
    return RetrievalIndex(codebook, tuple(documents), structure, cfg, doc_attention)


def section_sizes(index: RetrievalIndex) -> dict:
    cfg: EngineConfig = index.build_config
    sizes = {
        "codebook": len(_codebook_payload(index.codebook)),
        "documents": len(_documents_payload(index)),
    }
    payload = 1
    if cfg.candidate_mode == "hnsw":
        payload += len(_hnsw_payload(index.candidate_structure))
    sizes["candidates"] = payload
    if index.doc_attention is not None:
        sizes["attention"] = len(_attention_payload(index.doc_attention))
    return sizes


def storage_stats(index: RetrievalIndex, file_path=None) -> dict:
    """Measured per-section bytes, bytes/patch, and compression vs D*4 floats."""
    cb = index.codebook
    cfg: EngineConfig = index.build_config
    total_patches = sum(d.num_patches for d in index.documents)
    code_bytes = total_patches * cb.code_bytes
    packed_bytes = sum(
        len(d.packed_binary.data) for d in index.documents if d.packed_binary is not None
    )
    codebook_bytes = cb.k * cb.dim * 4
    sizes = section_sizes(index)
    float_per_patch = cb.dim * 4
    stored_code_per_patch = (
        packed_bytes / total_patches if cfg.binary_enabled else cb.code_bytes
    )
    amortized_per_patch = (
        (packed_bytes if cfg.binary_enabled else code_bytes)
        + codebook_bytes
        + sizes["candidates"]
    ) / total_patches
    stats = {
        "num_docs": index.num_docs,
        "total_patches": total_patches,
        "dim": cb.dim,
        "k": cb.k,
        "code_bytes_per_patch": cb.code_bytes,
        "codes_bytes_total": code_bytes,
        "packed_binary_bytes_total": packed_bytes,
        "bits_per_code": binary.bits_for(cb.k) if cfg.binary_enabled else 0,
        "codebook_bytes": codebook_bytes,
        "section_bytes": sizes,
        "float_baseline_bytes_per_patch": float_per_patch,
        "bytes_per_patch_amortized": amortized_per_patch,
        "compression_ratio": float_per_patch / amortized_per_patch,
        "code_only_compression_ratio": float_per_patch / stored_code_per_patch,
    }
    if file_path is not None:
        import os

        stats["file_bytes"] = os.path.getsize(file_path)
    return stats


# ---------------------------------------------------------------------------
# TREC qrels / run files
# ---------------------------------------------------------------------------


def write_qrels(path, qrels: dict) -> None:
    """qrels: {query_id: {doc_id: relevance}}; lines 'qid 0 docid rel'."""
    with open(path, "w") as f:
        for qid in sorted(qrels, key=str):
            for doc_id in sorted(qrels[qid], key=str):
                f.write(f"{qid} 0 {doc_id} {qrels[qid][doc_id]}\n")


def read_qrels(path) -> dict:
    qrels: dict = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{ln}: expected 'qid 0 docid rel', got {line!r}")
            qid, _, doc_id, rel = parts
            qrels.setdefault(qid, {})[doc_id] = int(rel)
    return qrels


def write_run(path, results: dict, tag: str = "hpcr") -> None:
    """results: {query_id: RankedResult}; lines 'qid Q0 docid rank score tag'."""
    with open(path, "w") as f:
        for qid in sorted(results, key=str):
            for rank, (doc_id, score) in enumerate(results[qid].entries, 1):
                f.write(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def read_run(path) -> dict:
    run: dict = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{ln}: expected 6 fields, got {line!r}")
            qid, _, doc_id, rank, score, _tag = parts
            run.setdefault(qid, []).append((doc_id, int(rank), float(score)))
    for qid, entries in run.items():
        entries.sort(key=lambda e: e[1])
        for expect, (_, rank, _) in enumerate(entries, 1):
            if rank != expect:
                raise ValueError(f"query {qid}: ranks not consecutive from 1")
    return run
