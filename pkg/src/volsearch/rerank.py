"""Late-interaction re-ranking and rank fusion.

The re-ranker scores a candidate volume by building the full similarity
matrix between query slices and candidate slices, taking each query
slice's best match, and summing those maxima. Candidates are always
scored against their complete slice set, even when the first-stage
index was built over a filtered subset; only the query side follows the
experiment's slice filter. Scoring is independent of first-stage
scores, so a candidate list produced by any ranking (or any index
configuration) re-ranks identically.

Rank fusion combines the three first-stage rankings by reciprocal
rank: each list contributes 1 / (k + rank) for every volume it
contains, nothing for volumes it misses.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, VolumeRecord
from .errors import QueryError, ValidationError
from .retrieval import DEFAULT_LIST_LIMIT, RankedList

#: Fusion constant; dampens the impact of high ranks.
DEFAULT_RRF_K = 60

#: The three first-stage rankings fusion expects, in canonical order.
FUSABLE_METHODS = ("count_base", "max_score", "sum_sim")


def embedding_matrix(volume: VolumeRecord,
                     slice_filter: Callable[[VolumeRecord, int], bool] | None = None
                     ) -> np.ndarray:
    """The volume's (num_slices, dim) unit-row matrix, optionally filtered."""
    if slice_filter is None:
        return volume.embeddings
    rows = [i for i in range(volume.num_slices) if slice_filter(volume, i)]
    if not rows:
        raise QueryError(f"volume {volume.volume_id!r} has no slices after filtering")
    return volume.embeddings[rows]


def similarity_matrix(query_matrix: np.ndarray, candidate_matrix: np.ndarray) -> np.ndarray:
    """All pairwise cosines between query rows and candidate rows (float64)."""
    query_matrix = np.asarray(query_matrix)
    candidate_matrix = np.asarray(candidate_matrix)
    if query_matrix.ndim != 2 or candidate_matrix.ndim != 2:
        raise ValidationError("similarity_matrix expects 2-D inputs")
    if query_matrix.shape[1] != candidate_matrix.shape[1]:
        raise ValidationError(
            f"dimension mismatch: query dim {query_matrix.shape[1]} vs "
            f"candidate dim {candidate_matrix.shape[1]}")
    return query_matrix.astype(np.float64) @ candidate_matrix.astype(np.float64).T


def late_interaction_score(query_matrix: np.ndarray, candidate_matrix: np.ndarray) -> float:
    """Sum over query slices of the best candidate-slice similarity."""
    sims = similarity_matrix(query_matrix, candidate_matrix)
    return float(sims.max(axis=1).sum())


def cmir_rerank(query_volume: VolumeRecord, candidates: RankedList, corpus: Corpus,
                query_slice_filter: Callable[[VolumeRecord, int], bool] | None = None
                ) -> RankedList:
    """Re-rank ``candidates`` by late-interaction score against the query volume.

    The candidate order only matters for ties: equal scores keep their
    incoming relative order. Candidate volumes are taken whole from
    ``corpus``; the query may be restricted (typically to organ slices)
    via ``query_slice_filter``.
    """
    query_matrix = embedding_matrix(query_volume, query_slice_filter)
    scored = []
    for vid, _ in candidates:
        scored.append((vid, late_interaction_score(query_matrix, corpus[vid].embeddings)))
    scored.sort(key=lambda item: -item[1])  # stable: ties keep incoming rank
    return RankedList("cmir", tuple(scored))


def rrf_fuse(lists: Sequence[RankedList], k: int = DEFAULT_RRF_K,
             limit: int = DEFAULT_LIST_LIMIT) -> RankedList:
    """Fuse the three first-stage rankings by reciprocal rank.

    A volume's fused score is the sum of 1 / (k + rank) over the lists
    that contain it (ranks are 1-based); a list that misses the volume
    contributes nothing. Ties break by volume id ascending. The result
    is truncated to ``limit`` entries.
    """
    if k < 1:
        raise ValidationError(f"fusion constant k must be >= 1, got {k}")
    methods = sorted(ranked.method for ranked in lists)
    if methods != sorted(FUSABLE_METHODS):
        raise ValidationError(
            f"fusion expects exactly one list per method {FUSABLE_METHODS}, "
            f"got {methods}")
    fused: dict[str, float] = {}
    for ranked in lists:
        for rank, (vid, _) in enumerate(ranked, start=1):
            fused[vid] = fused.get(vid, 0.0) + 1.0 / (k + rank)
    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))[:limit]
    return RankedList("rrf", tuple(ordered))
