"""Acceptance: extraction output is ingestible by the retrieval engine.

The check crosses the package boundary the supported way only: the store
and metadata files go through the engine's command line, never through
its internals, and the byte layout is verified here with struct alone.
"""

import struct
import subprocess
import sys

import numpy as np
import pytest

from volembed.extract import ExtractionJob, extract
from volembed.nifti import write_volume
from volembed.preprocess import Preprocess
from volembed.store import default_metadata_path

from fabricate import synthetic_volume, write_labels


@pytest.fixture(scope="module")
def scan_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("scans")
    rng = np.random.default_rng(2026)
    paths = []
    for i, (task, stage, slices) in enumerate([("colon", 2, 8),
                                               ("liver", 0, 6),
                                               ("pancreas", 4, 7)]):
        path = root / f"scan-{i:02d}.nii.gz"
        write_volume(path, synthetic_volume(rng, slices=slices, rows=24,
                                            cols=24))
        paths.append((path, task, stage, slices))
    labels = write_labels(root / "labels.csv",
                          [(p.name[:-7], task, stage, f"2-{slices - 2}")
                           for p, task, stage, slices in paths])
    return root, [p for p, *_ in paths], labels


def read_store_rows(path):
    """Decode every embedding row straight from the bytes."""
    blob = path.read_bytes()
    magic, version, dim, count = struct.unpack_from("<4sIIQ", blob, 0)
    assert (magic, version) == (b"VEMB", 1)
    rows, offset = [], struct.calcsize("<4sIIQ")
    for _ in range(count):
        id_len = struct.unpack_from("<H", blob, offset)[0]
        offset += 2 + id_len + 4
        rows.append(np.frombuffer(blob, "<f4", count=dim, offset=offset))
        offset += dim * 4
    assert offset == len(blob)
    return np.stack(rows)


def test_11_extraction_round_trip(scan_inputs, tmp_path):
    root, paths, labels = scan_inputs
    out = tmp_path / "scans.vemb"
    job = ExtractionJob(tuple(paths), labels, model="proj-32",
                        preprocess=Preprocess(target_size=24),
                        out_embeddings=out)
    report = extract(job)
    assert len(report.extracted) == 3
    assert report.failures == []

    # the engine must accept the files with zero errors
    ingest = subprocess.run(
        [sys.executable, "-m", "volsearch.cli", "ingest",
         "--embeddings", str(out)],
        capture_output=True, text=True)
    assert ingest.returncode == 0, ingest.stderr
    assert "ingested" in ingest.stdout
    assert ingest.stderr == ""

    # every stored row is unit length, checked on the raw bytes
    rows = read_store_rows(out)
    assert rows.shape == (8 + 6 + 7, 32)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-6

    # a second run reproduces both files bit for bit
    again = tmp_path / "again.vemb"
    extract(ExtractionJob(tuple(paths), labels, model="proj-32",
                          preprocess=Preprocess(target_size=24),
                          out_embeddings=again))
    assert again.read_bytes() == out.read_bytes()
    assert (default_metadata_path(again).read_bytes()
            == default_metadata_path(out).read_bytes())
