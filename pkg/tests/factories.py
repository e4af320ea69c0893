"""Builders for the small corpora and records the suites reuse."""

from __future__ import annotations

import numpy as np

from volsearch import Task, VolumeRecord
from volsearch.synthetic import SyntheticSpec


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def make_volume(volume_id: str, rng: np.random.Generator, *, task=Task.COLON,
                stage: int = 0, n: int = 6, dim: int = 8,
                organ=None) -> VolumeRecord:
    return VolumeRecord(
        volume_id=volume_id,
        task=task,
        tumor_stage=stage,
        embeddings=unit_rows(rng, n, dim),
        organ_slice_indices=frozenset(organ if organ is not None else range(n // 2)),
    )


def experiments_spec() -> SyntheticSpec:
    """Every task has at least two volumes per tumor stage, so p=0.25
    sampling never rounds a stage group to zero."""
    return SyntheticSpec(stage_counts={
        Task.COLON: (5, 2, 2, 2, 2),
        Task.LIVER: (5, 2, 2, 2, 2),
        Task.LUNG: (2, 2, 2, 2, 2),
        Task.PANCREAS: (8, 5, 5, 5, 5),
    })
