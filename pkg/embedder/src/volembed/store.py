"""Writer for the embedding store the retrieval engine ingests.

The binary layout (little-endian throughout):

* header: magic ``VEMB``, format version u32 = 1, dim u32, record count u64
* one record per slice: id length u16, volume id UTF-8, slice index u32,
  dim float32 components

Alongside it goes a JSON-lines metadata file, one object per volume with
keys ``volume_id``, ``task``, ``tumor_stage``, ``num_slices``,
``organ_slice_indices``. Volumes are written in ascending id order,
slices ascending, so identical inputs produce identical bytes.

This mirrors the consumer's reader from its written contract; the code
is deliberately independent so the two ends check each other.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

MAGIC = b"VEMB"
FORMAT_VERSION = 1
_HEADER = "<4sIIQ"


@dataclass(frozen=True)
class VolumeEmbeddings:
    """One volume's output: labels plus the (slices, dim) float32 rows."""

    volume_id: str
    task: str
    tumor_stage: int
    rows: np.ndarray
    organ_slice_indices: frozenset[int]

    def __post_init__(self) -> None:
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise InputError(f"{self.volume_id}: rows must be a non-empty 2-D array")
        object.__setattr__(self, "rows", rows)
        bad = [i for i in self.organ_slice_indices
               if not 0 <= i < rows.shape[0]]
        if bad:
            raise InputError(f"{self.volume_id}: organ slice index {bad[0]} "
                             f"out of range for {rows.shape[0]} slices")


def default_metadata_path(embeddings_path: str | Path) -> Path:
    path = Path(embeddings_path)
    return path.with_name(path.stem + ".meta.jsonl")


def _atomic_write(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_store(volumes: list[VolumeEmbeddings], embeddings_path: str | Path,
                metadata_path: str | Path | None = None) -> None:
    """Write the embedding store and its metadata sidecar atomically."""
    if not volumes:
        raise InputError("nothing to write: no volumes were extracted")
    ids = [v.volume_id for v in volumes]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate volume ids in extraction output")
    dims = {v.rows.shape[1] for v in volumes}
    if len(dims) != 1:
        raise InputError(f"embedding dimension must be constant per store, "
                         f"got {sorted(dims)}")
    dim = dims.pop()
    ordered = sorted(volumes, key=lambda v: v.volume_id)
    total = sum(v.rows.shape[0] for v in ordered)

    parts = [struct.pack(_HEADER, MAGIC, FORMAT_VERSION, dim, total)]
    meta_lines = []
    for volume in ordered:
        encoded = volume.volume_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise InputError(f"volume id too long: {volume.volume_id[:40]}...")
        for index in range(volume.rows.shape[0]):
            parts.append(struct.pack("<H", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", index))
            parts.append(volume.rows[index].tobytes())
        meta_lines.append(json.dumps({
            "volume_id": volume.volume_id,
            "task": volume.task,
            "tumor_stage": volume.tumor_stage,
            "num_slices": volume.rows.shape[0],
            "organ_slice_indices": sorted(volume.organ_slice_indices),
        }, separators=(", ", ": ")))

    embeddings_path = Path(embeddings_path)
    if metadata_path is None:
        metadata_path = default_metadata_path(embeddings_path)
    _atomic_write(embeddings_path, b"".join(parts))
    _atomic_write(Path(metadata_path), ("\n".join(meta_lines) + "\n").encode("utf-8"))
