"""Retrieval quality metrics and the paired significance test.

Two relevance notions are evaluated for every ranking:

* ``flagging``: the retrieved volume matches the query's tumor status
  (both contain a tumor, or both are tumor-free),
* ``staging``: the retrieved volume carries exactly the query's stage.

Average precision is computed over the top 10 entries, with the recall
denominator taken as the number of relevant volumes inside that window,
so a ranking that places all its window-relevant hits first scores 1.

The significance test is the two-sided Wilcoxon signed-rank test with
an exact null distribution (every sign assignment of the retained
differences), not the normal approximation; sample sizes here are far
too small for asymptotics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .retrieval import RankedList

RELEVANCE_TASKS = ("flagging", "staging")

#: Ranking depth that average precision inspects.
AP_DEPTH = 10

#: Precision cutoffs reported by the harness.
P_AT_CUTOFFS = (3, 5, 10)

#: Judges one retrieved volume id against an implicit query.
RelevanceJudge = Callable[[str], bool]


def flagging_relevant(query_stage: int, retrieved_stage: int) -> bool:
    """Tumor-status agreement: both staged > 0 or both tumor-free."""
    return (query_stage > 0) == (retrieved_stage > 0)


def staging_relevant(query_stage: int, retrieved_stage: int) -> bool:
    """Exact stage agreement (stage 0 matches only stage 0)."""
    return query_stage == retrieved_stage


def make_judge(relevance_task: str, query_stage: int,
               stage_of: Callable[[str], int]) -> RelevanceJudge:
    """Bind a relevance notion to a query stage and a stage lookup."""
    if relevance_task == "flagging":
        return lambda vid: flagging_relevant(query_stage, stage_of(vid))
    if relevance_task == "staging":
        return lambda vid: staging_relevant(query_stage, stage_of(vid))
    raise ValidationError(
        f"unknown relevance task {relevance_task!r}; expected one of {RELEVANCE_TASKS}")


def precision_at_k(ranked: RankedList, judge: RelevanceJudge, k: int) -> float:
    """Fraction of the first ``k`` ranks that are relevant.

    Lists shorter than ``k`` are penalized: the denominator stays ``k``.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    hits = sum(1 for vid, _ in ranked.entries[:k] if judge(vid))
    return hits / k


def average_precision(ranked: RankedList, judge: RelevanceJudge,
                      depth: int = AP_DEPTH) -> float:
    """AP over the top ``depth`` entries.

    Recall steps are relative to the relevant volumes found within the
    window; a window with no relevant volume scores 0.
    """
    if depth < 1:
        raise ValidationError(f"depth must be >= 1, got {depth}")
    window = ranked.entries[:depth]
    flags = [judge(vid) for vid, _ in window]
    total = sum(flags)
    if total == 0:
        return 0.0
    score = 0.0
    seen = 0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            seen += 1
            score += seen / rank
    return score / total


class WilcoxonResult(NamedTuple):
    """Exact two-sided signed-rank test outcome."""

    p_value: float
    statistic: float  # min(W+, W-) over the retained pairs
    n_retained: int
    degenerate: bool  # every difference was zero; p_value pinned to 1


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank_two_sided(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Exact two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped; |differences| are ranked with average
    ranks for ties. The p-value sums the exact null probabilities of
    both tails: ``min(1, 2 * P(W+ <= min(W+, W-)))`` with the W+
    distribution enumerated over all sign assignments. All-zero
    differences make the test undefined; that degenerate case reports
    p = 1 with a flag.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"paired samples must be 1-D and equally long, "
                              f"got shapes {a.shape} and {b.shape}")
    if a.size == 0:
        raise ValidationError("paired samples are empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("paired samples contain non-finite values")

    diff = a - b
    diff = diff[diff != 0.0]
    m = diff.size
    if m == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n_retained=0, degenerate=True)

    ranks = _average_ranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    total = m * (m + 1) / 2.0
    w_minus = total - w_plus
    statistic = min(w_plus, w_minus)

    # doubled ranks are integers even with ties, enabling an exact
    # subset-sum count over all 2^m sign assignments
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    target = int(np.rint(2.0 * statistic))
    counts = [0] * (int(doubled.sum()) + 1)
    counts[0] = 1
    top = 0
    for r in doubled:
        r = int(r)
        top += r
        for s in range(top, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    assignments_le = sum(counts[:target + 1])
    p = min(1.0, 2.0 * assignments_le / (1 << m))
    return WilcoxonResult(p_value=p, statistic=statistic, n_retained=m, degenerate=False)
