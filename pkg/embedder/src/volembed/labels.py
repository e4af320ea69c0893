"""Label sidecar: the stage/organ annotations extraction must not invent.

A CSV with header ``volume_id,task,tumor_stage,organ_slices`` supplies,
per volume, the task name, the tumor stage (0-4, 0 = tumor-free), and
the axial indices of organ-containing slices as inclusive ranges
(``"4-17"``, ``"4-10;14-17"``, or empty for none).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import InputError

EXPECTED_HEADER = ["volume_id", "task", "tumor_stage", "organ_slices"]
KNOWN_TASKS = ("colon", "liver", "lung", "pancreas")


@dataclass(frozen=True)
class VolumeLabels:
    volume_id: str
    task: str
    tumor_stage: int
    organ_slices: frozenset[int]


def parse_slice_ranges(text: str, where: str) -> frozenset[int]:
    """``"a-b;c-d"`` (inclusive) or single indices; empty means none."""
    text = text.strip()
    if not text:
        return frozenset()
    indices: set[int] = set()
    for part in text.split(";"):
        part = part.strip()
        try:
            if "-" in part:
                lo_text, hi_text = part.split("-", 1)
                lo, hi = int(lo_text), int(hi_text)
            else:
                lo = hi = int(part)
        except ValueError:
            raise InputError(f"{where}: bad slice range {part!r}") from None
        if lo < 0 or hi < lo:
            raise InputError(f"{where}: bad slice range {part!r}")
        indices.update(range(lo, hi + 1))
    return frozenset(indices)


def read_labels(path: str | Path) -> dict[str, VolumeLabels]:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read labels ({exc})") from None
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{path}: labels file is empty") from None
    if header != EXPECTED_HEADER:
        raise InputError(f"{path}: header must be {EXPECTED_HEADER}, got {header}")

    out: dict[str, VolumeLabels] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        where = f"{path}:{lineno}"
        if len(row) != 4:
            raise InputError(f"{where}: expected 4 fields, got {len(row)}")
        volume_id, task, stage_text, ranges = [field.strip() for field in row]
        if not volume_id:
            raise InputError(f"{where}: empty volume_id")
        if volume_id in out:
            raise InputError(f"{where}: duplicate volume_id {volume_id!r}")
        if task not in KNOWN_TASKS:
            raise InputError(f"{where}: unknown task {task!r}; "
                             f"expected one of {KNOWN_TASKS}")
        try:
            stage = int(stage_text)
        except ValueError:
            raise InputError(f"{where}: tumor_stage must be an integer") from None
        if not 0 <= stage <= 4:
            raise InputError(f"{where}: tumor_stage must be 0..4, got {stage}")
        out[volume_id] = VolumeLabels(volume_id, task, stage,
                                      parse_slice_ranges(ranges, where))
    if not out:
        raise InputError(f"{path}: labels file has no rows")
    return out
