"""Volume-level retrieval from slice-level search results.

Each query slice pulls its top slices from the index; the hits are
folded into a per-volume table of (hit count, best score, score sum).
Three rankings read that table:

* ``count_base``: how many slice hits a volume collected,
* ``max_score``: the single best slice similarity,
* ``sum_sim``: the sum of all slice similarities.

Before truncation the three orderings are permutations of the same
volume set; they differ only in sort key. Tie-breaks are fixed so that
results are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

from .ann import SliceIndex
from .corpus import VolumeRecord
from .errors import QueryError, ValidationError

#: Methods a RankedList can carry; these labels also appear in result CSVs.
METHODS = ("count_base", "max_score", "sum_sim", "cmir", "rrf")

#: Slice hits retrieved per query slice.
DEFAULT_SLICES_PER_QUERY = 20

#: Volumes kept per ranking.
DEFAULT_LIST_LIMIT = 20


@dataclass
class HitStats:
    """Accumulated slice-hit evidence for one candidate volume."""

    count: int = 0
    max_score: float = field(default=float("-inf"))
    sum_score: float = 0.0

    def add(self, score: float) -> None:
        self.count += 1
        self.sum_score += score
        if score > self.max_score:
            self.max_score = score


@dataclass(frozen=True)
class RankedList:
    """An ordered list of (volume_id, score), best first."""

    method: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "entries", tuple((str(v), float(s))
                                                  for v, s in self.entries))
        ids = [v for v, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{self.method} list contains duplicate volume ids")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValidationError(f"{self.method} list scores must be non-increasing")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    @property
    def volume_ids(self) -> list[str]:
        return [v for v, _ in self.entries]

    def truncated(self, limit: int) -> "RankedList":
        return RankedList(self.method, self.entries[:limit])


def build_hit_table(index: SliceIndex, query_volume: VolumeRecord,
                    slices_per_query: int = DEFAULT_SLICES_PER_QUERY,
                    query_slice_filter: Callable[[VolumeRecord, int], bool] | None = None,
                    exclude_self: bool = True) -> dict[str, HitStats]:
    """Run every query slice against ``index`` and fold hits per volume.

    Multiple hits on the same volume all count; that is what the count
    and sum aggregations measure. Slices of the query volume itself are
    excluded from the answers when ``exclude_self`` is set (it only
    matters when the query volume is part of the index).
    """
    if slices_per_query < 1:
        raise ValidationError(f"slices_per_query must be >= 1, got {slices_per_query}")
    rows = [i for i in range(query_volume.num_slices)
            if query_slice_filter is None or query_slice_filter(query_volume, i)]
    if not rows:
        raise QueryError(
            f"query volume {query_volume.volume_id!r} has no slices after filtering")
    exclude = query_volume.volume_id if exclude_self else None
    table: dict[str, HitStats] = {}
    for i in rows:
        for hit in index.knn(query_volume.embeddings[i], slices_per_query,
                             exclude_volume=exclude):
            table.setdefault(hit.volume_id, HitStats()).add(hit.score)
    return table


def _ranked(table: dict[str, HitStats], method: str, key, score, limit: int) -> RankedList:
    if limit < 1:
        raise ValidationError(f"limit must be >= 1, got {limit}")
    ordered = sorted(table.items(), key=key)[:limit]
    return RankedList(method, tuple((vid, score(stats)) for vid, stats in ordered))


def rank_count_base(table: dict[str, HitStats],
                    limit: int = DEFAULT_LIST_LIMIT) -> RankedList:
    """Volumes by hit count; ties by score sum, then id."""
    return _ranked(table, "count_base",
                   key=lambda kv: (-kv[1].count, -kv[1].sum_score, kv[0]),
                   score=lambda st: float(st.count), limit=limit)


def rank_max_score(table: dict[str, HitStats],
                   limit: int = DEFAULT_LIST_LIMIT) -> RankedList:
    """Volumes by best single slice score; ties by hit count, then id."""
    return _ranked(table, "max_score",
                   key=lambda kv: (-kv[1].max_score, -kv[1].count, kv[0]),
                   score=lambda st: st.max_score, limit=limit)


def rank_sum_sim(table: dict[str, HitStats],
                 limit: int = DEFAULT_LIST_LIMIT) -> RankedList:
    """Volumes by summed slice scores; ties by hit count, then id."""
    return _ranked(table, "sum_sim",
                   key=lambda kv: (-kv[1].sum_score, -kv[1].count, kv[0]),
                   score=lambda st: st.sum_score, limit=limit)
