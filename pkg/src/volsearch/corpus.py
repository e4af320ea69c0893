"""Corpus model and on-disk embedding store.

A corpus is a set of volumes, each carrying one embedding vector per
slice plus task and tumor-stage labels. Embeddings live in a compact
little-endian binary store (magic ``VEMB``); labels live in a JSON-lines
sidecar. Both files together round-trip a :class:`Corpus` bit-exactly.

Binary layout (all integers little-endian):

    header:  magic ``VEMB`` (4 bytes) | version u32 | dim u32 | record_count u64
    record:  volume_id_len u16 | volume_id (UTF-8) | slice_index u32 | dim * float32

Metadata rows look like::

    {"volume_id": "...", "task": "colon", "tumor_stage": 2,
     "num_slices": 94, "organ_slice_indices": [31, 32, ...]}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import ConsistencyError, FormatError, ValidationError
from .fsio import atomic_write_bytes, atomic_write_text

MAGIC = b"VEMB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")
_SLICE_INDEX = struct.Struct("<I")

#: Row norms further than this from 1.0 are renormalized on load.
NORM_TOLERANCE = 1e-6

#: Tumor stage labels: 0 means no tumor, 1..4 are T stages.
STAGE_MIN, STAGE_MAX = 0, 4


class Task(str, Enum):
    """The four anatomical tasks a volume can belong to."""

    COLON = "colon"
    LIVER = "liver"
    LUNG = "lung"
    PANCREAS = "pancreas"

    def __str__(self) -> str:  # stable across Python minor versions
        return self.value


#: Tasks in canonical (alphabetical) order; used wherever a fixed
#: iteration order matters for determinism.
TASKS: tuple[Task, ...] = tuple(sorted(Task, key=lambda t: t.value))


class SliceKey(NamedTuple):
    """Identifies one slice of one volume."""

    volume_id: str
    slice_index: int


def parse_task(name: str) -> Task:
    try:
        return Task(name)
    except ValueError:
        raise ValidationError(f"unknown task {name!r}; expected one of "
                              f"{[t.value for t in TASKS]}") from None


def normalize_rows(matrix: np.ndarray, tolerance: float = NORM_TOLERANCE) -> np.ndarray:
    """Return ``matrix`` with every row unit-norm (float32).

    Rows already within ``tolerance`` of unit norm are kept untouched so
    that normalized data survives a round trip bit-exactly. A zero-norm
    row cannot be normalized and raises :class:`ValidationError`.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValidationError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("embedding matrix contains non-finite components")
    zero = norms == 0.0
    if np.any(zero):
        raise ValidationError(f"row {int(np.flatnonzero(zero)[0])} has zero norm")
    off = np.abs(norms - 1.0) > tolerance
    if np.any(off):
        matrix = matrix.copy()
        matrix[off] = (matrix[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return matrix


@dataclass(frozen=True)
class VolumeRecord:
    """One volume: per-slice embeddings plus labels.

    ``embeddings`` is a read-only ``(num_slices, dim)`` float32 matrix with
    unit-norm rows; row ``i`` embeds slice ``i``. ``organ_slice_indices``
    marks the slices that contain the task's organ of interest.
    """

    volume_id: str
    task: Task
    tumor_stage: int
    embeddings: np.ndarray
    organ_slice_indices: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.volume_id:
            raise ValidationError("volume_id must be non-empty")
        if not isinstance(self.task, Task):
            object.__setattr__(self, "task", parse_task(self.task))
        if not STAGE_MIN <= self.tumor_stage <= STAGE_MAX:
            raise ValidationError(
                f"volume {self.volume_id!r}: tumor_stage {self.tumor_stage} "
                f"outside [{STAGE_MIN}, {STAGE_MAX}]")
        emb = self.embeddings
        if not isinstance(emb, np.ndarray) or emb.ndim != 2 or emb.dtype != np.float32:
            raise ValidationError(
                f"volume {self.volume_id!r}: embeddings must be a 2-D float32 array")
        if emb.shape[0] < 1 or emb.shape[1] < 1:
            raise ValidationError(
                f"volume {self.volume_id!r}: embeddings shape {emb.shape} is degenerate")
        if not np.all(np.isfinite(emb)):
            raise ValidationError(f"volume {self.volume_id!r}: non-finite embedding component")
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        # loose net only; loaders and generators normalize to float32 precision
        if np.any(np.abs(norms - 1.0) > 1e-4):
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise ValidationError(
                f"volume {self.volume_id!r}: slice {worst} norm {norms[worst]:.6f} "
                "is not unit (normalize before constructing records)")
        bad = [i for i in self.organ_slice_indices if not 0 <= i < emb.shape[0]]
        if bad:
            raise ValidationError(
                f"volume {self.volume_id!r}: organ slice index {bad[0]} out of range")
        if not isinstance(self.organ_slice_indices, frozenset):
            object.__setattr__(self, "organ_slice_indices",
                               frozenset(self.organ_slice_indices))
        emb.setflags(write=False)

    @property
    def num_slices(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def slice_vector(self, index: int) -> np.ndarray:
        return self.embeddings[index]


@dataclass
class Corpus:
    """All volumes of a dataset, keyed by volume id.

    Iteration order is always ascending volume id, which downstream code
    relies on for deterministic index builds and sampling.
    """

    dim: int
    volumes: dict[str, VolumeRecord]

    @classmethod
    def from_records(cls, records: Iterable[VolumeRecord]) -> "Corpus":
        by_id: dict[str, VolumeRecord] = {}
        dim: int | None = None
        for record in records:
            if record.volume_id in by_id:
                raise ConsistencyError(f"duplicate volume id {record.volume_id!r}")
            if dim is None:
                dim = record.dim
            elif record.dim != dim:
                raise ConsistencyError(
                    f"volume {record.volume_id!r} has dim {record.dim}, expected {dim}")
            by_id[record.volume_id] = record
        if dim is None:
            raise ValidationError("corpus must contain at least one volume")
        ordered = {vid: by_id[vid] for vid in sorted(by_id)}
        return cls(dim=dim, volumes=ordered)

    def __len__(self) -> int:
        return len(self.volumes)

    def __contains__(self, volume_id: str) -> bool:
        return volume_id in self.volumes

    def __getitem__(self, volume_id: str) -> VolumeRecord:
        try:
            return self.volumes[volume_id]
        except KeyError:
            raise ConsistencyError(f"unknown volume id {volume_id!r}") from None

    def __iter__(self) -> Iterator[VolumeRecord]:
        return iter(self.volumes.values())

    @property
    def volume_ids(self) -> list[str]:
        return list(self.volumes)

    @property
    def total_slices(self) -> int:
        return sum(v.num_slices for v in self)

    def subset(self, volume_ids: Iterable[str]) -> "Corpus":
        """A corpus restricted to ``volume_ids`` (records shared, not copied)."""
        picked = {}
        for vid in sorted(set(volume_ids)):
            picked[vid] = self[vid]
        if not picked:
            raise ValidationError("subset would be empty")
        return Corpus(dim=self.dim, volumes=picked)

    def task_summary(self) -> dict[Task, tuple[int, int]]:
        """Per task: (volume count, slice count)."""
        summary = {task: (0, 0) for task in TASKS}
        for record in self:
            volumes, slices = summary[record.task]
            summary[record.task] = (volumes + 1, slices + record.num_slices)
        return summary


def default_metadata_path(embeddings_path: str | Path) -> Path:
    """Conventional metadata sidecar path for an embedding store."""
    path = Path(embeddings_path)
    return path.with_name(path.stem + ".meta.jsonl")


def write_embeddings(corpus: Corpus, embeddings_path: str | Path,
                     metadata_path: str | Path | None = None) -> None:
    """Serialize ``corpus`` to a VEMB store plus JSON-lines metadata.

    Volumes are written in ascending id order, slices ascending within
    each volume. Both files are written atomically.
    """
    embeddings_path = Path(embeddings_path)
    if metadata_path is None:
        metadata_path = default_metadata_path(embeddings_path)

    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, corpus.dim, corpus.total_slices)]
    meta_lines = []
    for record in corpus:
        id_bytes = record.volume_id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise ValidationError(f"volume id {record.volume_id!r} exceeds 65535 bytes")
        prefix = _ID_LEN.pack(len(id_bytes)) + id_bytes
        for index in range(record.num_slices):
            chunks.append(prefix)
            chunks.append(_SLICE_INDEX.pack(index))
            chunks.append(record.embeddings[index].tobytes())
        meta_lines.append(json.dumps({
            "volume_id": record.volume_id,
            "task": record.task.value,
            "tumor_stage": record.tumor_stage,
            "num_slices": record.num_slices,
            "organ_slice_indices": sorted(record.organ_slice_indices),
        }, separators=(", ", ": ")))

    atomic_write_bytes(embeddings_path, b"".join(chunks))
    atomic_write_text(metadata_path, "\n".join(meta_lines) + "\n")


def _read_metadata(metadata_path: Path) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    required = {"volume_id", "task", "tumor_stage", "num_slices", "organ_slice_indices"}
    try:
        text = metadata_path.read_text("utf-8")
    except FileNotFoundError:
        raise FormatError(f"metadata file not found: {metadata_path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{metadata_path}:{lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(row, dict):
            raise FormatError(f"{metadata_path}:{lineno}: expected a JSON object")
        missing = required - row.keys()
        if missing:
            raise FormatError(
                f"{metadata_path}:{lineno}: missing keys {sorted(missing)}")
        vid = row["volume_id"]
        if not isinstance(vid, str) or not vid:
            raise FormatError(f"{metadata_path}:{lineno}: volume_id must be a non-empty string")
        if vid in rows:
            raise ConsistencyError(f"{metadata_path}:{lineno}: duplicate volume id {vid!r}")
        if not isinstance(row["num_slices"], int) or row["num_slices"] < 1:
            raise FormatError(f"{metadata_path}:{lineno}: num_slices must be a positive integer")
        if not isinstance(row["tumor_stage"], int):
            raise FormatError(f"{metadata_path}:{lineno}: tumor_stage must be an integer")
        indices = row["organ_slice_indices"]
        if (not isinstance(indices, list)
                or any(not isinstance(i, int) or i < 0 for i in indices)):
            raise FormatError(
                f"{metadata_path}:{lineno}: organ_slice_indices must be a list of "
                "non-negative integers")
        rows[vid] = row
    if not rows:
        raise FormatError(f"{metadata_path}: no metadata rows")
    return rows


def load_embeddings(embeddings_path: str | Path,
                    metadata_path: str | Path | None = None) -> Corpus:
    """Load a corpus from a VEMB store and its metadata sidecar.

    Rows whose norms drift more than ``NORM_TOLERANCE`` from 1.0 are
    renormalized; already-normalized stores round-trip bit-exactly.
    Structural violations raise :class:`FormatError` naming the byte
    offset; cross-file disagreements raise :class:`ConsistencyError`.
    """
    embeddings_path = Path(embeddings_path)
    if metadata_path is None:
        metadata_path = default_metadata_path(embeddings_path)
    metadata_path = Path(metadata_path)

    try:
        blob = embeddings_path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"embedding store not found: {embeddings_path}") from None

    if len(blob) < _HEADER.size:
        raise FormatError(f"{embeddings_path}: truncated header at offset 0 "
                          f"(need {_HEADER.size} bytes, have {len(blob)})")
    magic, version, dim, record_count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{embeddings_path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise FormatError(f"{embeddings_path}: unsupported version {version} at offset 4")
    if dim < 1:
        raise FormatError(f"{embeddings_path}: dim must be positive at offset 8")

    vector_bytes = dim * 4
    offset = _HEADER.size
    slices: dict[str, dict[int, np.ndarray]] = {}
    for _ in range(record_count):
        if offset + _ID_LEN.size > len(blob):
            raise FormatError(f"{embeddings_path}: truncated record at offset {offset}")
        (id_len,) = _ID_LEN.unpack_from(blob, offset)
        body = _ID_LEN.size + id_len + _SLICE_INDEX.size + vector_bytes
        if offset + body > len(blob):
            raise FormatError(f"{embeddings_path}: truncated record at offset {offset}")
        cursor = offset + _ID_LEN.size
        try:
            vid = blob[cursor:cursor + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(
                f"{embeddings_path}: volume id at offset {cursor} is not valid UTF-8") from None
        cursor += id_len
        (slice_index,) = _SLICE_INDEX.unpack_from(blob, cursor)
        cursor += _SLICE_INDEX.size
        vector = np.frombuffer(blob, dtype="<f4", count=dim, offset=cursor)
        per_volume = slices.setdefault(vid, {})
        if slice_index in per_volume:
            raise ConsistencyError(
                f"{embeddings_path}: duplicate slice {slice_index} of volume {vid!r} "
                f"at offset {offset}")
        per_volume[slice_index] = vector
        offset += body
    if offset != len(blob):
        raise FormatError(
            f"{embeddings_path}: {len(blob) - offset} trailing bytes at offset {offset}")

    meta = _read_metadata(metadata_path)
    unknown = sorted(set(slices) - set(meta))
    if unknown:
        raise ConsistencyError(
            f"volume {unknown[0]!r} has embeddings but no metadata row")
    absent = sorted(set(meta) - set(slices))
    if absent:
        raise ConsistencyError(
            f"metadata row references unknown volume id {absent[0]!r}")

    records = []
    for vid, row in meta.items():
        per_volume = slices[vid]
        expected = row["num_slices"]
        if len(per_volume) != expected:
            raise ConsistencyError(
                f"volume {vid!r}: metadata says {expected} slices, "
                f"store has {len(per_volume)}")
        if set(per_volume) != set(range(expected)):
            missing = sorted(set(range(expected)) - set(per_volume))[0]
            raise ConsistencyError(f"volume {vid!r}: slice {missing} missing from store")
        matrix = np.vstack([per_volume[i] for i in range(expected)])
        records.append(VolumeRecord(
            volume_id=vid,
            task=parse_task(row["task"]),
            tumor_stage=row["tumor_stage"],
            embeddings=normalize_rows(matrix),
            organ_slice_indices=frozenset(row["organ_slice_indices"]),
        ))
    return Corpus.from_records(records)
