"""Command-line surface: gen-synthetic, build-index, query, eval, bench.

Exit codes: 0 success, 2 usage/validation error, 1 runtime failure. Errors go
to stderr; machine output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evalbench, storage
from .engine import EngineConfig, build_index, query
from .errors import HpcrError
from .evalbench import SyntheticSpec
from .pruner import PruneConfig
from .quantizer import KMeansConfig
from .scorer import ScoreCounter

log = logging.getLogger("hpcr")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("HPC_LOG_LEVEL", "warn").lower()
    logging.basicConfig(
        stream=sys.stderr,
        level=_LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config_file(path) -> dict:
    """Simple 'key = value' config; '#' starts a comment."""
    values = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _resolve(args, name, cast, default):
    """Precedence: command-line flag > config file > default."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    cfg = getattr(args, "_config_values", {})
    if name in cfg:
        return cast(cfg[name])
    return default


def _add_common(sub):
    sub.add_argument("--config", help="key=value config file; flags take precedence")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (deterministic mode keeps results thread-count independent)")


def cmd_gen_synthetic(args) -> int:
    try:
        spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise UsageError(f"bad synthetic spec: {e}")
    data = evalbench.gen_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_embeddings(out / "corpus.hpce", data.corpus)
    storage.write_embeddings(out / "queries.hpce", data.queries)
    storage.write_qrels(out / "qrels.txt", data.qrels)
    print(f"wrote {len(data.corpus)} docs, {len(data.queries)} queries to {out}")
    return 0


def cmd_build_index(args) -> int:
    k = _resolve(args, "k", int, 256)
    if k < 2:
        raise UsageError(f"K must be >= 2, got {k}")
    prune_p = _resolve(args, "prune_p", float, 1.0)
    if not 0.0 < prune_p <= 1.0:
        raise UsageError(f"--prune-p must be in (0, 1], got {prune_p}")
    try:
        docs, mode = storage.read_embeddings(args.embeddings)
        cfg = EngineConfig(
            kmeans=KMeansConfig(k=k, seed=_resolve(args, "seed", int, 0)),
            prune=PruneConfig(prune_p, _resolve(args, "prune_side", str, "query")),
            similarity_mode=mode,
            candidate_mode=_resolve(args, "candidate_mode", str, "postings"),
            binary_enabled=bool(args.binary or _resolve(args, "candidate_mode", str, "postings") == "hamming"),
            locality_ordering=bool(args.locality_ordering),
            train_sample_fraction=_resolve(args, "train_sample_fraction", float, 1.0),
        )
    except ValueError as e:
        raise UsageError(str(e))
    index = build_index(docs, cfg)
    storage.save_index(index, args.out)
    stats = storage.storage_stats(index, args.out)
    print(evalbench.report_to_text(stats))
    return 0


def cmd_query(args) -> int:
    prune_p = _resolve(args, "prune_p", float, None)
    if prune_p is not None and not 0.0 < prune_p <= 1.0:
        raise UsageError(f"--prune-p must be in (0, 1], got {prune_p}")
    top_k = _resolve(args, "top_k", int, 10)
    if top_k < 1:
        raise UsageError("--top-k must be >= 1")
    index = storage.load_index(args.index)
    queries, _ = storage.read_embeddings(args.queries)
    results = {}
    for qpm in queries:
        results[str(qpm.doc_id)] = query(
            index, qpm, top_k=top_k, prune_p=prune_p,
            r_candidates=_resolve(args, "r_candidates", int, None),
            c_nearest=_resolve(args, "c_nearest", int, None),
        )
    storage.write_run(args.run_out, results, tag=args.tag)
    print(f"wrote run file {args.run_out} for {len(results)} queries")
    return 0


def cmd_eval(args) -> int:
    run = storage.read_run(args.run)
    qrels = storage.read_qrels(args.qrels)
    missing = sorted(set(run) - set(qrels))
    if missing:
        raise UsageError(f"run has query ids absent from qrels: {', '.join(missing)}")
    rankings = {qid: [doc for doc, _, _ in entries] for qid, entries in run.items()}
    summary = evalbench.quality_summary(rankings, qrels, k=_resolve(args, "k", int, 10))
    summary.pop("per_query_ndcg", None)
    text = evalbench.report_to_text(summary)
    print(text)
    if args.json_out:
        Path(args.json_out).write_text(evalbench.report_to_json(summary))
    return 0


def cmd_bench(args) -> int:
    index = storage.load_index(args.index)
    queries, _ = storage.read_embeddings(args.queries)
    qrels = storage.read_qrels(args.qrels) if args.qrels else None
    baseline = None
    if args.embeddings:
        baseline, _ = storage.read_embeddings(args.embeddings)
    report = evalbench.bench(
        index, queries, qrels=qrels,
        warmup=_resolve(args, "warmup", int, 10),
        float_baseline_corpus=baseline,
    )
    print(evalbench.report_to_text(report))
    if args.json_out:
        Path(args.json_out).write_text(evalbench.report_to_json(report))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpcr", description="Quantized multi-vector retrieval engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus, queries, and qrels")
    p.add_argument("--spec", required=True, help="JSON file with the synthetic corpus spec")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-index", help="train the codebook and build an index file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--locality-ordering", action="store_true")
    p.add_argument("--candidate-mode", choices=("postings", "hnsw", "hamming"), default=None)
    p.add_argument("--prune-p", type=float, default=None, help="document-side retention fraction")
    p.add_argument("--prune-side", choices=("query", "doc", "both"), default=None)
    p.add_argument("--train-sample-fraction", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="run queries against an index, write a TREC run file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--run-out", required=True)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--prune-p", type=float, default=None)
    p.add_argument("--r-candidates", type=int, default=None)
    p.add_argument("--c-nearest", type=int, default=None)
    p.add_argument("--tag", default="hpcr")
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--json-out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency/throughput benchmark with optional quality metrics")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", default=None)
    p.add_argument("--embeddings", default=None, help="raw embeddings for the float flat-scan baseline")
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--json-out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            args._config_values = _load_config_file(args.config)
        else:
            args._config_values = {}
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except HpcrError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
