"""Command-line interface.

Subcommands cover the full workflow: ``synth`` makes a corpus, ``ingest``
validates stores and prints the dataset table, ``build-index`` persists
an index, ``run`` executes a seeded experiment sweep, and ``rerank`` /
``evaluate`` operate on ranking CSV files produced elsewhere.

Exit codes: 0 on success, 2 for bad usage or invalid/inconsistent
inputs, 1 for unexpected runtime failures. File outputs are atomic.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .ann import (INDEX_MODES, IndexConfig, build_index, load_index,
                  organ_slices_only, save_index)
from .corpus import TASKS, Corpus, load_embeddings, parse_task, write_embeddings
from .errors import INPUT_ERRORS, ConsistencyError, ValidationError, VolsearchError
from .experiments import MODES, read_plan, sweep_plans, write_plan
from .fsio import atomic_write_text
from .harness import (HarnessConfig, evaluate_experiment, metrics_csv,
                      rankings_csv, read_rankings_csv, run_plan, score_plan,
                      segmentation_effect_csv, significance_csv, summary_csv,
                      summary_tables)
from .metrics import RELEVANCE_TASKS
from .rerank import DEFAULT_RRF_K, FUSABLE_METHODS, cmir_rerank, rrf_fuse
from .retrieval import DEFAULT_LIST_LIMIT, DEFAULT_SLICES_PER_QUERY
from .synthetic import SyntheticSpec, desk_spec, generate_synthetic_corpus


def _print_task_table(corpus: Corpus) -> None:
    summary = corpus.task_summary()
    print(f"{'task':<10} {'volumes':>8} {'slices':>8}")
    for task in TASKS:
        volumes, slices = summary[task]
        print(f"{task.value:<10} {volumes:>8} {slices:>8}")
    print(f"{'total':<10} {len(corpus):>8} {corpus.total_slices:>8}")


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = load_embeddings(args.embeddings, args.metadata)
    print(f"ingested {args.embeddings}: dim={corpus.dim}")
    _print_task_table(corpus)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec.from_json_file(args.spec) if args.spec else desk_spec()
    corpus = generate_synthetic_corpus(spec, args.seed)
    write_embeddings(corpus, args.out_embeddings, args.out_metadata)
    print(f"wrote {corpus.total_slices} slice embeddings "
          f"({len(corpus)} volumes, dim={corpus.dim}, seed={args.seed})")
    _print_task_table(corpus)
    return 0


def _index_config(args: argparse.Namespace) -> IndexConfig:
    return IndexConfig(mode=args.mode, m=args.m,
                       ef_construction=args.ef_construction,
                       ef_search=args.ef_search, seed=args.index_seed)


def cmd_build_index(args: argparse.Namespace) -> int:
    corpus = load_embeddings(args.embeddings, args.metadata)
    config = _index_config(args)
    slice_filter = organ_slices_only if args.organ_slices_only else None
    started = time.perf_counter()
    index = build_index(corpus, config, slice_filter=slice_filter)
    elapsed = time.perf_counter() - started
    save_index(index, args.out)
    print(f"built {config.mode} index over {len(index)} slices "
          f"(dim={index.dim}) in {elapsed:.2f}s -> {args.out}")
    return 0


def _parse_int_list(text: str, what: str) -> list[int]:
    """Accept "0-9", "1,3,5", or a mix of both."""
    out: list[int] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token[1:]:
            head, _, tail = token.partition("-") if not token.startswith("-") \
                else token[1:].partition("-")
            try:
                lo, hi = int(head), int(tail)
            except ValueError:
                raise ValidationError(f"bad {what} range {token!r}") from None
            if hi < lo:
                raise ValidationError(f"bad {what} range {token!r}")
            out.extend(range(lo, hi + 1))
        else:
            try:
                out.append(int(token))
            except ValueError:
                raise ValidationError(f"bad {what} value {token!r}") from None
    if not out:
        raise ValidationError(f"no {what} values given")
    return out


def _load_run_settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text("utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"run config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: run config must be a JSON object")
        known = {"embeddings", "metadata", "p", "seeds", "modes", "organs", "index",
                 "slices_per_query", "list_limit", "rerank_source", "rrf_k"}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"{path}: unknown run config keys {sorted(unknown)}")
        settings.update(raw)
        # paths inside the config resolve against the config's directory
        for key in ("embeddings", "metadata"):
            if settings.get(key):
                settings[key] = str((path.parent / settings[key]).resolve())
    return settings


def cmd_run(args: argparse.Namespace) -> int:
    settings = _load_run_settings(args)
    embeddings = args.embeddings or settings.get("embeddings")
    if not embeddings:
        raise ValidationError("no embedding store given (flag --embeddings or config)")
    metadata = args.metadata or settings.get("metadata")

    p = args.p if args.p is not None else settings.get("p", 0.25)
    seeds = (_parse_int_list(args.seeds, "seed") if args.seeds
             else list(settings.get("seeds", range(10))))
    modes = tuple(args.modes.split(",")) if args.modes else tuple(settings.get("modes", MODES))
    for mode in modes:
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    organs = (tuple(parse_task(o) for o in args.organs.split(","))
              if args.organs else tuple(parse_task(o) for o in settings.get(
                  "organs", [t.value for t in TASKS])))

    index_raw = dict(settings.get("index", {}))
    if args.index_mode:
        index_raw["mode"] = args.index_mode
    index_raw.setdefault("mode", "exact")
    config = HarnessConfig(
        index=IndexConfig.from_json_dict(index_raw),
        slices_per_query=args.slices_per_query or settings.get(
            "slices_per_query", DEFAULT_SLICES_PER_QUERY),
        list_limit=args.list_limit or settings.get("list_limit", DEFAULT_LIST_LIMIT),
        rerank_source=args.rerank_source or settings.get("rerank_source", "count_base"),
        rrf_k=args.rrf_k or settings.get("rrf_k", DEFAULT_RRF_K),
    )

    corpus = load_embeddings(embeddings, metadata)
    plans = sweep_plans(corpus, p, seeds, modes, organs)
    started = time.perf_counter()
    report = evaluate_experiment(plans, corpus, config, max_workers=args.workers)
    elapsed = time.perf_counter() - started

    out = Path(args.out)
    for plan in plans:
        write_plan(plan, out / "plans" / f"{plan.name}.json")
        atomic_write_text(out / "rankings" / f"{plan.name}.csv",
                          rankings_csv(report.rankings[plan.name]))
    atomic_write_text(out / "metrics.csv", metrics_csv(report.rows))
    summaries = report.summaries()
    atomic_write_text(out / "summary.csv", summary_csv(summaries))
    atomic_write_text(out / "significance.csv", significance_csv(report.significance()))
    atomic_write_text(out / "segmentation_effect.csv",
                      segmentation_effect_csv(report.segmentation_effect()))
    atomic_write_text(out / "tables.txt", summary_tables(summaries))

    print(f"ran {len(plans)} plans ({len(seeds)} seeds) in {elapsed:.1f}s -> {out}")
    return 0


def cmd_rerank(args: argparse.Namespace) -> int:
    corpus = load_embeddings(args.embeddings, args.metadata)
    rankings = read_rankings_csv(Path(args.rankings).read_text("utf-8"))
    query_filter = organ_slices_only if args.query_organ_slices else None
    out: dict[str, dict[str, object]] = {}
    for qid in sorted(rankings):
        per_method = rankings[qid]
        if qid not in corpus:
            raise ConsistencyError(f"query volume {qid!r} not present in corpus")
        produced = {}
        if args.method == "cmir":
            source = per_method.get(args.source)
            if source is None:
                raise ConsistencyError(
                    f"query {qid!r} has no {args.source!r} list to re-rank")
            produced["cmir"] = cmir_rerank(corpus[qid], source, corpus,
                                           query_slice_filter=query_filter)
        else:
            missing = [m for m in FUSABLE_METHODS if m not in per_method]
            if missing:
                raise ConsistencyError(f"query {qid!r} is missing lists {missing}")
            produced["rrf"] = rrf_fuse([per_method[m] for m in FUSABLE_METHODS],
                                       k=args.rrf_k, limit=args.list_limit)
        out[qid] = produced
    atomic_write_text(args.out, rankings_csv(out))
    print(f"wrote {args.method} lists for {len(out)} queries -> {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    corpus = load_embeddings(args.embeddings, args.metadata)
    plan = read_plan(args.plan)
    plan.validate_against(corpus)
    rankings = read_rankings_csv(Path(args.rankings).read_text("utf-8"))
    unknown = sorted(set(rankings) - set(plan.query_ids))
    if unknown:
        raise ConsistencyError(
            f"rankings contain query {unknown[0]!r} not in the plan")
    method_sets = {frozenset(per_method) for per_method in rankings.values()}
    if len(method_sets) != 1:
        raise ConsistencyError("queries disagree on which methods are present")
    methods = sorted(next(iter(method_sets)))
    rows = score_plan(plan, corpus, rankings, methods=methods)
    text = metrics_csv(rows)
    if args.out:
        atomic_write_text(args.out, text)
        print(f"wrote metrics for {len(rankings)} queries -> {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volsearch",
        description="Slice-level retrieval over volumetric image embeddings.")
    parser.add_argument("--version", action="version", version=f"volsearch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--embeddings", required=True, help="embedding store (.vemb)")
        p.add_argument("--metadata", default=None,
                       help="metadata JSON-lines file (default: derived from --embeddings)")

    p = sub.add_parser("ingest", help="validate a store and print the dataset table")
    add_corpus_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", default=None, help="synthetic spec JSON (default: desk-scale)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-embeddings", required=True)
    p.add_argument("--out-metadata", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-index", help="build and persist a slice index")
    add_corpus_args(p)
    p.add_argument("--mode", choices=INDEX_MODES, default="hnsw")
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--ef-search", type=int, default=128)
    p.add_argument("--index-seed", type=int, default=0)
    p.add_argument("--organ-slices-only", action="store_true",
                   help="index only slices marked as organ slices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("run", help="run a seeded experiment sweep")
    p.add_argument("--config", default=None, help="run config JSON")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--metadata", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--p", type=float, default=None, help="sampling rate (default 0.25)")
    p.add_argument("--seeds", default=None, help='e.g. "0-9" or "0,1,4"')
    p.add_argument("--modes", default=None, help=f"comma list of {MODES}")
    p.add_argument("--organs", default=None, help="comma list of tasks")
    p.add_argument("--index-mode", choices=INDEX_MODES, default=None)
    p.add_argument("--slices-per-query", type=int, default=None)
    p.add_argument("--list-limit", type=int, default=None)
    p.add_argument("--rerank-source", choices=FUSABLE_METHODS, default=None)
    p.add_argument("--rrf-k", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="worker pool size (also capped by VOLSEARCH_MAX_WORKERS)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rerank", help="re-rank or fuse lists from a rankings CSV")
    add_corpus_args(p)
    p.add_argument("--rankings", required=True, help="input rankings CSV")
    p.add_argument("--method", choices=("cmir", "rrf"), required=True)
    p.add_argument("--source", choices=FUSABLE_METHODS, default="count_base",
                   help="list the late-interaction re-ranker consumes")
    p.add_argument("--rrf-k", type=int, default=DEFAULT_RRF_K)
    p.add_argument("--list-limit", type=int, default=DEFAULT_LIST_LIMIT)
    p.add_argument("--query-organ-slices", action="store_true",
                   help="restrict query volumes to their organ slices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("evaluate", help="score a rankings CSV against a plan")
    add_corpus_args(p)
    p.add_argument("--plan", required=True, help="plan JSON the rankings came from")
    p.add_argument("--rankings", required=True)
    p.add_argument("--out", default=None, help="metrics CSV path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VolsearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
