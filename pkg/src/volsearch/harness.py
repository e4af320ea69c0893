"""End-to-end evaluation: plans in, ranked lists and metric tables out.

For every plan the harness materializes the database index, runs each
query volume through first-stage retrieval, derives the late-interaction
and fusion rankings, and scores everything under both relevance notions.
Per-seed means feed the paired significance tests. All grouping and
emission orders are fixed so identical inputs produce identical files.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .ann import IndexConfig
from .corpus import Corpus
from .errors import ValidationError
from .experiments import (ExperimentPlan, ORGAN_SPECIFIC_MODES, materialize)
from .metrics import (AP_DEPTH, P_AT_CUTOFFS, RELEVANCE_TASKS, average_precision,
                      make_judge, precision_at_k, wilcoxon_signed_rank_two_sided)
from .rerank import DEFAULT_RRF_K, FUSABLE_METHODS, cmir_rerank, rrf_fuse
from .retrieval import (DEFAULT_LIST_LIMIT, DEFAULT_SLICES_PER_QUERY, METHODS,
                        RankedList, build_hit_table, rank_count_base,
                        rank_max_score, rank_sum_sim)

#: Env var capping the harness worker pool.
WORKERS_ENV = "VOLSEARCH_MAX_WORKERS"


@dataclass(frozen=True)
class HarnessConfig:
    """Knobs of the retrieval pipeline, with the defaults used throughout."""

    index: IndexConfig = field(default_factory=lambda: IndexConfig(mode="exact"))
    slices_per_query: int = DEFAULT_SLICES_PER_QUERY
    list_limit: int = DEFAULT_LIST_LIMIT
    rerank_source: str = "count_base"
    rrf_k: int = DEFAULT_RRF_K
    ap_depth: int = AP_DEPTH
    p_cutoffs: tuple[int, ...] = P_AT_CUTOFFS

    def __post_init__(self) -> None:
        if self.rerank_source not in FUSABLE_METHODS:
            raise ValidationError(
                f"rerank_source must be one of {FUSABLE_METHODS}, "
                f"got {self.rerank_source!r}")


@dataclass(frozen=True)
class MetricRow:
    """Means over one plan's queries for one method and relevance notion."""

    mode: str
    organ: str  # task name or "all"
    seed: int
    method: str
    relevance: str
    p_at_3: float
    p_at_5: float
    p_at_10: float
    ap: float
    num_queries: int


@dataclass(frozen=True)
class SummaryRow:
    """Seed-averaged metrics for one (mode, organ, method, relevance) cell."""

    mode: str
    organ: str
    method: str
    relevance: str
    p_at_3: float
    p_at_5: float
    p_at_10: float
    ap: float
    num_seeds: int


@dataclass(frozen=True)
class SignificanceRow:
    """Paired test over per-seed AP means."""

    mode: str
    organ: str
    relevance: str
    method_a: str
    method_b: str
    p_value: float
    num_seeds: int
    degenerate: bool


@dataclass(frozen=True)
class SegmentationEffectRow:
    """Segmented vs unsegmented database, same method, paired by seed."""

    organ: str
    relevance: str
    method: str
    p_value: float
    num_seeds: int
    degenerate: bool


def run_plan(plan: ExperimentPlan, corpus: Corpus,
             config: HarnessConfig | None = None
             ) -> dict[str, dict[str, RankedList]]:
    """All five rankings for every query volume of one plan."""
    config = config or HarnessConfig()
    index, queries = materialize(plan, corpus, config.index)
    query_filter = plan.query_slice_filter()
    results: dict[str, dict[str, RankedList]] = {}
    for query in queries:
        table = build_hit_table(index, query,
                                slices_per_query=config.slices_per_query,
                                query_slice_filter=query_filter)
        lists = {
            "count_base": rank_count_base(table, config.list_limit),
            "max_score": rank_max_score(table, config.list_limit),
            "sum_sim": rank_sum_sim(table, config.list_limit),
        }
        lists["cmir"] = cmir_rerank(query, lists[config.rerank_source], corpus,
                                    query_slice_filter=query_filter)
        lists["rrf"] = rrf_fuse([lists[m] for m in FUSABLE_METHODS],
                                k=config.rrf_k, limit=config.list_limit)
        results[query.volume_id] = lists
    return results


def score_plan(plan: ExperimentPlan, corpus: Corpus,
               rankings: Mapping[str, Mapping[str, RankedList]],
               config: HarnessConfig | None = None,
               methods: Sequence[str] = METHODS) -> list[MetricRow]:
    """Metric rows (means over queries) for one plan's rankings."""
    config = config or HarnessConfig()
    organ = plan.organ.value if plan.organ else "all"
    stage_of = lambda vid: plan.effective_stage(corpus[vid])
    rows = []
    for relevance in RELEVANCE_TASKS:
        for method in methods:
            per_query = {cut: [] for cut in config.p_cutoffs}
            aps = []
            for qid in sorted(rankings):
                ranked = rankings[qid][method]
                judge = make_judge(relevance, stage_of(qid), stage_of)
                for cut in config.p_cutoffs:
                    per_query[cut].append(precision_at_k(ranked, judge, cut))
                aps.append(average_precision(ranked, judge, config.ap_depth))
            count = len(aps)
            rows.append(MetricRow(
                mode=plan.mode, organ=organ, seed=plan.seed,
                method=method, relevance=relevance,
                p_at_3=sum(per_query[3]) / count,
                p_at_5=sum(per_query[5]) / count,
                p_at_10=sum(per_query[10]) / count,
                ap=sum(aps) / count,
                num_queries=count,
            ))
    return rows


@dataclass
class EvaluationReport:
    """Everything a sweep produced, in deterministic order."""

    rows: list[MetricRow]
    rankings: dict[str, dict[str, dict[str, RankedList]]]  # plan name -> qid -> method

    def summaries(self) -> list[SummaryRow]:
        groups: dict[tuple, list[MetricRow]] = {}
        for row in self.rows:
            groups.setdefault((row.mode, row.organ, row.method, row.relevance),
                              []).append(row)
        out = []
        for (mode, organ, method, relevance), members in sorted(groups.items()):
            n = len(members)
            out.append(SummaryRow(
                mode=mode, organ=organ, method=method, relevance=relevance,
                p_at_3=sum(m.p_at_3 for m in members) / n,
                p_at_5=sum(m.p_at_5 for m in members) / n,
                p_at_10=sum(m.p_at_10 for m in members) / n,
                ap=sum(m.ap for m in members) / n,
                num_seeds=n,
            ))
        return out

    def _seed_ap_series(self) -> dict[tuple, dict[int, float]]:
        series: dict[tuple, dict[int, float]] = {}
        for row in self.rows:
            series.setdefault((row.mode, row.organ, row.method, row.relevance),
                              {})[row.seed] = row.ap
        return series

    def significance(self, baseline: str = "cmir") -> list[SignificanceRow]:
        """Paired per-seed AP: ``baseline`` against every other method."""
        series = self._seed_ap_series()
        cells = sorted({(mode, organ, relevance)
                        for mode, organ, _, relevance in series})
        out = []
        for mode, organ, relevance in cells:
            base = series.get((mode, organ, baseline, relevance))
            if not base:
                continue
            for method in METHODS:
                if method == baseline:
                    continue
                other = series.get((mode, organ, method, relevance))
                if not other:
                    continue
                seeds = sorted(set(base) & set(other))
                if len(seeds) < 2:
                    continue
                result = wilcoxon_signed_rank_two_sided(
                    [base[s] for s in seeds], [other[s] for s in seeds])
                out.append(SignificanceRow(
                    mode=mode, organ=organ, relevance=relevance,
                    method_a=baseline, method_b=method,
                    p_value=result.p_value, num_seeds=len(seeds),
                    degenerate=result.degenerate))
        return out

    def segmentation_effect(self) -> list[SegmentationEffectRow]:
        """Seg vs noseg databases, paired by seed, per organ and method."""
        series = self._seed_ap_series()
        seg, noseg = ORGAN_SPECIFIC_MODES
        organs = sorted({organ for mode, organ, _, _ in series if mode == seg})
        out = []
        for organ in organs:
            for relevance in RELEVANCE_TASKS:
                for method in METHODS:
                    a = series.get((seg, organ, method, relevance))
                    b = series.get((noseg, organ, method, relevance))
                    if not a or not b:
                        continue
                    seeds = sorted(set(a) & set(b))
                    if len(seeds) < 2:
                        continue
                    result = wilcoxon_signed_rank_two_sided(
                        [a[s] for s in seeds], [b[s] for s in seeds])
                    out.append(SegmentationEffectRow(
                        organ=organ, relevance=relevance, method=method,
                        p_value=result.p_value, num_seeds=len(seeds),
                        degenerate=result.degenerate))
        return out


def _resolve_workers(max_workers: int | None) -> int:
    cap = os.environ.get(WORKERS_ENV)
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError:
            raise ValidationError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from None
        if cap < 1:
            raise ValidationError(f"{WORKERS_ENV} must be >= 1, got {cap}")
    workers = max_workers or os.cpu_count() or 1
    if cap is not None:
        workers = min(workers, cap)
    return max(1, workers)


def evaluate_experiment(plans: Sequence[ExperimentPlan], corpus: Corpus,
                        config: HarnessConfig | None = None,
                        methods: Sequence[str] = METHODS,
                        max_workers: int | None = None) -> EvaluationReport:
    """Run and score a sweep of plans.

    Plans are evaluated in a worker pool (each plan is independent);
    results are assembled in plan order, so the report is identical to
    a sequential run.
    """
    config = config or HarnessConfig()
    names = [plan.name for plan in plans]
    if len(set(names)) != len(names):
        raise ValidationError("plan names collide; check modes/organs/seeds")

    def job(plan: ExperimentPlan) -> tuple[dict, list[MetricRow]]:
        rankings = run_plan(plan, corpus, config)
        return rankings, score_plan(plan, corpus, rankings, config, methods)

    workers = _resolve_workers(max_workers)
    if workers == 1 or len(plans) == 1:
        outcomes = [job(plan) for plan in plans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, plans))

    report = EvaluationReport(rows=[], rankings={})
    for plan, (rankings, rows) in zip(plans, outcomes):
        report.rankings[plan.name] = rankings
        report.rows.extend(rows)
    return report


# ---------------------------------------------------------------------------
# emission

def _csv_text(header: list[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def rankings_csv(rankings: Mapping[str, Mapping[str, RankedList]]) -> str:
    """One plan's rankings as ``query_id,rank,volume_id,score,method`` rows."""
    rows = []
    for qid in sorted(rankings):
        for method in METHODS:
            ranked = rankings[qid].get(method)
            if ranked is None:
                continue
            for rank, (vid, score) in enumerate(ranked, start=1):
                rows.append([qid, rank, vid, repr(score), method])
    return _csv_text(["query_id", "rank", "volume_id", "score", "method"], rows)


def read_rankings_csv(text: str) -> dict[str, dict[str, RankedList]]:
    """Parse a rankings CSV back into per-query RankedLists."""
    from .errors import FormatError
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("rankings CSV is empty") from None
    expected = ["query_id", "rank", "volume_id", "score", "method"]
    if header != expected:
        raise FormatError(f"rankings CSV header must be {expected}, got {header}")
    acc: dict[str, dict[str, list[tuple[int, str, float]]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise FormatError(f"rankings CSV line {lineno}: expected 5 fields")
        qid, rank_text, vid, score_text, method = row
        try:
            rank = int(rank_text)
            score = float(score_text)
        except ValueError:
            raise FormatError(f"rankings CSV line {lineno}: bad rank or score") from None
        acc.setdefault(qid, {}).setdefault(method, []).append((rank, vid, score))
    out: dict[str, dict[str, RankedList]] = {}
    for qid, per_method in acc.items():
        out[qid] = {}
        for method, triples in per_method.items():
            triples.sort()
            if [rank for rank, _, _ in triples] != list(range(1, len(triples) + 1)):
                raise FormatError(
                    f"rankings CSV: ranks of query {qid!r} method {method!r} "
                    "are not consecutive from 1")
            out[qid][method] = RankedList(
                method, tuple((vid, score) for _, vid, score in triples))
    return out


def metrics_csv(rows: Sequence[MetricRow]) -> str:
    return _csv_text(
        ["mode", "organ", "seed", "method", "relevance",
         "p_at_3", "p_at_5", "p_at_10", "ap", "num_queries"],
        [[r.mode, r.organ, r.seed, r.method, r.relevance,
          repr(r.p_at_3), repr(r.p_at_5), repr(r.p_at_10), repr(r.ap),
          r.num_queries] for r in rows])


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    return _csv_text(
        ["mode", "organ", "method", "relevance",
         "p_at_3", "p_at_5", "p_at_10", "ap", "num_seeds"],
        [[r.mode, r.organ, r.method, r.relevance,
          repr(r.p_at_3), repr(r.p_at_5), repr(r.p_at_10), repr(r.ap),
          r.num_seeds] for r in rows])


def significance_csv(rows: Sequence[SignificanceRow]) -> str:
    return _csv_text(
        ["mode", "organ", "relevance", "method_a", "method_b",
         "p_value", "num_seeds", "degenerate"],
        [[r.mode, r.organ, r.relevance, r.method_a, r.method_b,
          repr(r.p_value), r.num_seeds, int(r.degenerate)] for r in rows])


def segmentation_effect_csv(rows: Sequence[SegmentationEffectRow]) -> str:
    return _csv_text(
        ["organ", "relevance", "method", "p_value", "num_seeds", "degenerate"],
        [[r.organ, r.relevance, r.method, repr(r.p_value), r.num_seeds,
          int(r.degenerate)] for r in rows])


def summary_tables(rows: Sequence[SummaryRow]) -> str:
    """Aligned text tables, one block per (relevance, mode, organ)."""
    blocks = []
    cells = sorted({(r.relevance, r.mode, r.organ) for r in rows})
    for relevance, mode, organ in cells:
        members = {r.method: r for r in rows
                   if (r.relevance, r.mode, r.organ) == (relevance, mode, organ)}
        lines = [f"{relevance} | {mode} | organ={organ} "
                 f"({next(iter(members.values())).num_seeds} seeds)"]
        lines.append(f"  {'method':<12} {'P@3':>8} {'P@5':>8} {'P@10':>8} {'AP':>8}")
        for method in METHODS:
            row = members.get(method)
            if row is None:
                continue
            lines.append(f"  {method:<12} {row.p_at_3:>8.4f} {row.p_at_5:>8.4f} "
                         f"{row.p_at_10:>8.4f} {row.ap:>8.4f}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
