"""The extraction job: volumes in, one embedding store out."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ModelError, VolembedError
from .labels import VolumeLabels, read_labels
from .models import load_model
from .nifti import read_volume
from .preprocess import Preprocess
from .store import VolumeEmbeddings, write_store


@dataclass(frozen=True)
class ExtractionJob:
    """Everything one extraction run needs.

    The model fixes the embedding dimension, so it is constant across
    the job by construction. Volume ids are the file stems (``.nii`` and
    ``.nii.gz`` stripped) and must each have a row in the labels CSV.
    """

    volume_paths: tuple[Path, ...]
    labels_path: Path
    model: str = "proj-256"
    preprocess: Preprocess = field(default_factory=Preprocess)
    out_embeddings: Path = Path("embeddings.vemb")
    out_metadata: Path | None = None

    def __post_init__(self) -> None:
        paths = tuple(Path(p) for p in self.volume_paths)
        if not paths:
            raise InputError("extraction job has no input volumes")
        object.__setattr__(self, "volume_paths", paths)
        object.__setattr__(self, "labels_path", Path(self.labels_path))
        object.__setattr__(self, "out_embeddings", Path(self.out_embeddings))
        if self.out_metadata is not None:
            object.__setattr__(self, "out_metadata", Path(self.out_metadata))


def volume_id_for(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return path.stem


@dataclass
class ExtractionReport:
    """What happened: which volumes made it, which failed and why."""

    extracted: list[str] = field(default_factory=list)
    failures: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)
    dim: int = 0
    total_slices: int = 0


def extract(job: ExtractionJob) -> ExtractionReport:
    """Run the job and write the store.

    A volume that cannot be read or labeled is recorded as a failure and
    the job continues; a model that cannot be loaded aborts immediately.
    The job fails only if no volume survives.
    """
    try:
        model = load_model(job.model)
    except ModelError:
        raise  # abort: nothing sensible can be produced without the extractor
    labels = read_labels(job.labels_path)

    report = ExtractionReport(dim=model.dim)
    outputs: list[VolumeEmbeddings] = []
    for path in job.volume_paths:
        volume_id = volume_id_for(path)
        try:
            row = labels.get(volume_id)
            if row is None:
                raise InputError(f"{path}: no labels row for volume id {volume_id!r}")
            outputs.append(_extract_one(path, volume_id, row, model, job.preprocess))
        except VolembedError as exc:
            report.failures.append((str(path), str(exc)))
            continue
        report.extracted.append(volume_id)
    if not outputs:
        detail = report.failures[0][1] if report.failures else "no inputs"
        raise InputError(f"every volume failed extraction; first error: {detail}")

    write_store(outputs, job.out_embeddings, job.out_metadata)
    report.total_slices = sum(v.rows.shape[0] for v in outputs)
    return report


def _extract_one(path: Path, volume_id: str, labels: VolumeLabels,
                 model, preprocess: Preprocess) -> VolumeEmbeddings:
    volume = read_volume(path)
    organ = labels.organ_slices
    out_of_range = [i for i in organ if i >= volume.shape[0]]
    if out_of_range:
        raise InputError(f"{path}: organ slice {out_of_range[0]} beyond "
                         f"{volume.shape[0]} slices")
    pixel_rows = preprocess.apply_volume(volume)
    rows = model.embed(pixel_rows)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ModelError(f"{model.name}: embeddings are not unit-normalized")
    return VolumeEmbeddings(volume_id=volume_id, task=labels.task,
                            tumor_stage=labels.tumor_stage, rows=rows,
                            organ_slice_indices=organ)
