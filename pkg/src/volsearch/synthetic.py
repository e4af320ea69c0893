"""Seeded synthetic corpora with planted cluster structure.

Volumes are built from latent unit-vector cluster centers: a pool of
background centers shared across tasks (so mixed-content volumes look
alike at the slice level), one organ center per task, and one tumor
center per (task, stage) pair. Slices draw from a center plus isotropic
Gaussian noise and are renormalized, so with ``noise_sigma = 0`` slices
from the same center are identical and their cosine similarity is 1.

Generation is a pure function of (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import Corpus, Task, TASKS, VolumeRecord, parse_task
from .errors import ValidationError

#: stage_counts entries: volumes per tumor stage 0 (no tumor) through 4.
STAGES_PER_TASK = 5


def _default_stage_counts() -> dict[Task, tuple[int, ...]]:
    # roughly a tenth of the reference dataset's task mix
    return {
        Task.COLON: (5, 2, 2, 2, 2),
        Task.LIVER: (5, 2, 2, 2, 2),
        Task.LUNG: (2, 1, 1, 1, 1),
        Task.PANCREAS: (8, 5, 5, 5, 5),
    }


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a planted-cluster corpus."""

    dim: int = 32
    stage_counts: Mapping[Task, tuple[int, ...]] = field(
        default_factory=_default_stage_counts)
    slice_range: tuple[int, int] = (10, 30)
    num_background_centers: int = 5
    noise_sigma: float = 0.25
    organ_fraction: tuple[float, float] = (0.3, 0.6)
    tumor_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValidationError(f"dim must be positive, got {self.dim}")
        counts = {parse_task(t): tuple(c) for t, c in self.stage_counts.items()}
        if set(counts) != set(TASKS):
            raise ValidationError("stage_counts must cover exactly the four tasks")
        for task, per_stage in counts.items():
            if len(per_stage) != STAGES_PER_TASK:
                raise ValidationError(
                    f"stage_counts[{task.value}] needs {STAGES_PER_TASK} entries "
                    f"(stages 0-4), got {len(per_stage)}")
            if any(not isinstance(c, int) or c < 0 for c in per_stage):
                raise ValidationError(
                    f"stage_counts[{task.value}] must be non-negative integers")
        object.__setattr__(self, "stage_counts", counts)
        lo, hi = self.slice_range
        if not 1 <= lo <= hi:
            raise ValidationError(f"slice_range must satisfy 1 <= lo <= hi, got {self.slice_range}")
        if self.num_background_centers < 1:
            raise ValidationError("num_background_centers must be positive")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        f_lo, f_hi = self.organ_fraction
        if not 0 < f_lo <= f_hi <= 1:
            raise ValidationError(f"organ_fraction must satisfy 0 < lo <= hi <= 1, "
                                  f"got {self.organ_fraction}")
        if not 0 < self.tumor_fraction <= 1:
            raise ValidationError(f"tumor_fraction must be in (0, 1], got {self.tumor_fraction}")

    @property
    def total_volumes(self) -> int:
        return sum(sum(c) for c in self.stage_counts.values())

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "stage_counts": {t.value: list(self.stage_counts[t]) for t in TASKS},
            "slice_range": list(self.slice_range),
            "num_background_centers": self.num_background_centers,
            "noise_sigma": self.noise_sigma,
            "organ_fraction": list(self.organ_fraction),
            "tumor_fraction": self.tumor_fraction,
        }

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown synthetic spec keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "stage_counts" in kwargs:
            kwargs["stage_counts"] = {
                parse_task(t): tuple(c) for t, c in kwargs["stage_counts"].items()}
        for key in ("slice_range", "organ_fraction"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SyntheticSpec":
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"synthetic spec not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"{path}: expected a JSON object")
        return cls.from_json_dict(raw)


def desk_spec() -> SyntheticSpec:
    """Small default corpus: 60 volumes across the four tasks."""
    return SyntheticSpec()


def _unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vectors = rng.standard_normal((count, dim))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / norms


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int) -> Corpus:
    """Draw a corpus from ``spec``; same (spec, seed) always yields the same corpus."""
    rng = np.random.default_rng(seed)
    dim = spec.dim

    background = _unit_vectors(rng, spec.num_background_centers, dim)
    organ_center = {task: _unit_vectors(rng, 1, dim)[0] for task in TASKS}
    tumor_center = {(task, stage): _unit_vectors(rng, 1, dim)[0]
                    for task in TASKS for stage in range(1, STAGES_PER_TASK)}

    lo, hi = spec.slice_range
    f_lo, f_hi = spec.organ_fraction
    records = []
    for task in TASKS:
        serial = 0
        for stage, count in enumerate(spec.stage_counts[task]):
            for _ in range(count):
                volume_id = f"{task.value}-{serial:03d}"
                serial += 1
                num_slices = int(rng.integers(lo, hi + 1))

                organ_len = max(1, int(round(num_slices * rng.uniform(f_lo, f_hi))))
                organ_len = min(organ_len, num_slices)
                organ_start = int(rng.integers(0, num_slices - organ_len + 1))
                organ = np.arange(organ_start, organ_start + organ_len)

                centers = np.empty((num_slices, dim))
                for index in range(num_slices):
                    if index not in range(organ_start, organ_start + organ_len):
                        pick = int(rng.integers(0, spec.num_background_centers))
                        centers[index] = background[pick]
                    else:
                        centers[index] = organ_center[task]
                if stage > 0:
                    tumor_count = max(1, int(round(organ_len * spec.tumor_fraction)))
                    tumor_slices = rng.choice(organ, size=tumor_count, replace=False)
                    centers[np.sort(tumor_slices)] = tumor_center[(task, stage)]

                if spec.noise_sigma > 0:
                    centers = centers + spec.noise_sigma * rng.standard_normal(centers.shape)
                norms = np.linalg.norm(centers, axis=1, keepdims=True)
                if np.any(norms == 0.0):
                    raise ValidationError("degenerate zero-norm slice drawn; "
                                          "lower noise_sigma")
                embeddings = (centers / norms).astype(np.float32)

                records.append(VolumeRecord(
                    volume_id=volume_id,
                    task=task,
                    tumor_stage=stage,
                    embeddings=embeddings,
                    organ_slice_indices=frozenset(int(i) for i in organ),
                ))
    return Corpus.from_records(records)
