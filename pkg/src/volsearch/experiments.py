"""Seeded experiment plans: query/database splits and their materialization.

A plan fixes which volumes are queries and which form the search
database, at the volume level, so no slice of a query volume is ever
indexed. Three setups exist:

* ``organ_specific_seg``: one organ's experiment; the database index
  holds only organ slices (segmentation applied),
* ``organ_specific_noseg``: same split, database indexes whole volumes,
* ``organ_agnostic``: queries from all four tasks over one shared
  database of whole volumes.

Positives are drawn per stage group with replacement and deduplicated;
negatives match the positive count one-to-one. For a given (organ, p,
seed) the two organ-specific setups share the identical split, so
segmented and unsegmented databases are compared on the same queries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .ann import IndexConfig, SliceFilter, SliceIndex, build_index, organ_slices_only
from .corpus import Corpus, Task, TASKS, VolumeRecord, parse_task
from .errors import FormatError, SamplingError, ValidationError

MODES = ("organ_specific_seg", "organ_specific_noseg", "organ_agnostic")
ORGAN_SPECIFIC_MODES = ("organ_specific_seg", "organ_specific_noseg")

#: Tumor stages that define positive volumes.
POSITIVE_STAGES = (1, 2, 3, 4)


def round_half_up(value: float) -> int:
    """Round with .5 going up; sample sizes must not depend on bankers' rounding."""
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class ExperimentPlan:
    """One materializable experiment: mode, sampling parameters, and the split."""

    mode: str
    organ: Task | None
    p: float
    seed: int
    query_ids: tuple[str, ...]
    database_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ORGAN_SPECIFIC_MODES:
            if self.organ is None:
                raise ValidationError(f"mode {self.mode} requires an organ")
            if not isinstance(self.organ, Task):
                object.__setattr__(self, "organ", parse_task(self.organ))
        elif self.organ is not None:
            raise ValidationError("organ_agnostic plans must not name an organ")
        if not 0.0 < self.p <= 1.0:
            raise ValidationError(f"p must be in (0, 1], got {self.p}")
        object.__setattr__(self, "query_ids", tuple(sorted(self.query_ids)))
        object.__setattr__(self, "database_ids", tuple(sorted(self.database_ids)))
        if not self.query_ids:
            raise ValidationError("plan has no query volumes")
        if not self.database_ids:
            raise ValidationError("plan has no database volumes")
        overlap = set(self.query_ids) & set(self.database_ids)
        if overlap:
            raise ValidationError(
                f"query and database sets overlap (e.g. {sorted(overlap)[0]!r})")

    @property
    def name(self) -> str:
        organ = self.organ.value if self.organ else "all"
        return f"{self.mode}_{organ}_seed{self.seed}"

    def effective_stage(self, volume: VolumeRecord) -> int:
        """The volume's tumor stage as seen by this experiment.

        In organ-specific setups a volume of another task counts as
        tumor-free: whatever tumor it carries is not in the probed organ.
        """
        if self.organ is not None and volume.task != self.organ:
            return 0
        return volume.tumor_stage

    def query_slice_filter(self) -> SliceFilter | None:
        """Slice filter applied to query volumes (organ slices when probing an organ)."""
        if self.mode in ORGAN_SPECIFIC_MODES:
            return organ_slices_only
        return None

    def database_slice_filter(self) -> SliceFilter | None:
        """Slice filter applied when indexing the database."""
        if self.mode == "organ_specific_seg":
            return organ_slices_only
        return None

    def validate_against(self, corpus: Corpus) -> None:
        """Check id membership and the 1:1 positive/negative balance."""
        for vid in self.query_ids + self.database_ids:
            if vid not in corpus:
                raise ValidationError(f"plan references unknown volume id {vid!r}")
        positives = sum(1 for vid in self.query_ids
                        if self.effective_stage(corpus[vid]) > 0)
        negatives = len(self.query_ids) - positives
        if positives != negatives:
            raise ValidationError(
                f"plan is unbalanced: {positives} positive vs {negatives} negative queries")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "organ": self.organ.value if self.organ else None,
            "p": self.p,
            "seed": self.seed,
            "query_ids": list(self.query_ids),
            "database_ids": list(self.database_ids),
        }


def write_plan(plan: ExperimentPlan, path: str | Path) -> None:
    from .fsio import atomic_write_text
    atomic_write_text(path, json.dumps(plan.to_json_dict(), indent=2) + "\n")


def read_plan(path: str | Path) -> ExperimentPlan:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise FormatError(f"plan file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})") from None
    required = {"mode", "organ", "p", "seed", "query_ids", "database_ids"}
    if not isinstance(raw, dict) or not required <= raw.keys():
        raise FormatError(f"{path}: plan must be an object with keys {sorted(required)}")
    return ExperimentPlan(
        mode=raw["mode"],
        organ=parse_task(raw["organ"]) if raw["organ"] is not None else None,
        p=raw["p"],
        seed=raw["seed"],
        query_ids=tuple(raw["query_ids"]),
        database_ids=tuple(raw["database_ids"]),
    )


def _split_rng(seed: int, organ: Task | None) -> np.random.Generator:
    # seg/noseg share splits: the stream depends on (seed, organ) only
    ordinal = len(TASKS) if organ is None else TASKS.index(organ)
    return np.random.default_rng([seed, ordinal])


def _draw_positives(rng: np.random.Generator, pools: list[list[str]], p: float) -> list[str]:
    """Per-pool draws of round(|pool| * p) with replacement, deduplicated."""
    seen: set[str] = set()
    for pool in pools:
        size = round_half_up(len(pool) * p)
        if size == 0:
            continue
        seen.update(rng.choice(np.asarray(pool, dtype=object), size=size, replace=True))
    return sorted(seen)


def _draw_negatives(rng: np.random.Generator, pool: list[str], count: int,
                    what: str) -> list[str]:
    if len(pool) < count:
        raise SamplingError(
            f"need {count} negatives {what} but only {len(pool)} are eligible")
    picked = rng.choice(np.asarray(pool, dtype=object), size=count, replace=False)
    return sorted(picked)


def sample_organ_specific(corpus: Corpus, organ: Task | str, p: float, seed: int,
                          mode: str = "organ_specific_seg") -> ExperimentPlan:
    """Draw the query/database split for one organ's experiment.

    Positives come from the organ's task, sampled per tumor stage with
    replacement and deduplicated. Negatives are volumes of the other
    tasks that contain organ-of-interest slices, matched one-to-one to
    the positive count. Everything never sampled forms the database.
    """
    organ = parse_task(organ) if not isinstance(organ, Task) else organ
    if mode not in ORGAN_SPECIFIC_MODES:
        raise ValidationError(f"mode must be one of {ORGAN_SPECIFIC_MODES}, got {mode!r}")
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"p must be in (0, 1], got {p}")

    stage_pools = []
    for stage in POSITIVE_STAGES:
        pool = sorted(v.volume_id for v in corpus
                      if v.task == organ and v.tumor_stage == stage)
        if not pool:
            raise SamplingError(
                f"{organ.value}: no stage-{stage} volumes to sample from")
        stage_pools.append(pool)

    rng = _split_rng(seed, organ)
    positives = _draw_positives(rng, stage_pools, p)
    if not positives:
        raise SamplingError(
            f"{organ.value}: p={p} rounds every stage sample to zero volumes")

    negative_pool = sorted(v.volume_id for v in corpus
                           if v.task != organ and v.organ_slice_indices)
    negatives = _draw_negatives(rng, negative_pool, len(positives),
                                f"for organ {organ.value}")

    queries = set(positives) | set(negatives)
    database = [vid for vid in corpus.volume_ids if vid not in queries]
    return ExperimentPlan(mode=mode, organ=organ, p=p, seed=seed,
                          query_ids=tuple(queries), database_ids=tuple(database))


def sample_organ_agnostic(corpus: Corpus, p: float, seed: int) -> ExperimentPlan:
    """Draw the shared-database split with queries from all four tasks.

    Per task, tumor volumes are sampled with replacement at rate ``p``
    and deduplicated; an equal number of the task's tumor-free volumes
    join as negatives.
    """
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"p must be in (0, 1], got {p}")
    rng = _split_rng(seed, None)
    queries: set[str] = set()
    for task in TASKS:
        tumor_pool = sorted(v.volume_id for v in corpus
                            if v.task == task and v.tumor_stage > 0)
        clean_pool = sorted(v.volume_id for v in corpus
                            if v.task == task and v.tumor_stage == 0)
        if not tumor_pool or not clean_pool:
            raise SamplingError(
                f"{task.value}: need at least one tumor and one tumor-free volume")
        positives = _draw_positives(rng, [tumor_pool], p)
        negatives = _draw_negatives(rng, clean_pool, len(positives),
                                    f"for task {task.value}")
        queries.update(positives)
        queries.update(negatives)
    if not queries:
        raise SamplingError(f"p={p} rounds every task sample to zero volumes")
    database = [vid for vid in corpus.volume_ids if vid not in queries]
    return ExperimentPlan(mode="organ_agnostic", organ=None, p=p, seed=seed,
                          query_ids=tuple(queries), database_ids=tuple(database))


def sweep_plans(corpus: Corpus, p: float, seeds: list[int],
                modes: tuple[str, ...] = MODES,
                organs: tuple[Task, ...] = TASKS) -> list[ExperimentPlan]:
    """All plans of a sweep, ordered (seed, mode, organ) for reproducible output."""
    plans = []
    for seed in seeds:
        for mode in modes:
            if mode in ORGAN_SPECIFIC_MODES:
                for organ in organs:
                    plans.append(sample_organ_specific(corpus, organ, p, seed, mode))
            else:
                plans.append(sample_organ_agnostic(corpus, p, seed))
    return plans


def materialize(plan: ExperimentPlan, corpus: Corpus,
                config: IndexConfig | None = None
                ) -> tuple[SliceIndex, list[VolumeRecord]]:
    """Build the plan's database index and collect its query volumes.

    The index covers database volumes only, slice-filtered per mode.
    Query volumes are returned whole; apply ``plan.query_slice_filter()``
    when querying so organ-specific setups search with organ slices.
    """
    plan.validate_against(corpus)
    database = corpus.subset(plan.database_ids)
    index = build_index(database, config, slice_filter=plan.database_slice_filter())
    queries = [corpus[vid] for vid in plan.query_ids]
    return index, queries
