"""End-to-end extraction runs, library and command line."""

import json
import struct

import numpy as np
import pytest

from volembed.cli import main
from volembed.errors import InputError, ModelError
from volembed.extract import ExtractionJob, extract, volume_id_for
from volembed.nifti import write_volume
from volembed.preprocess import Preprocess
from volembed.store import default_metadata_path

from fabricate import synthetic_volume, write_labels


def make_inputs(tmp_path, rng, count=3, slices=6):
    """A few small scans plus a labels file covering them all."""
    paths, rows = [], []
    tasks = ["colon", "liver", "lung", "pancreas"]
    for i in range(count):
        path = tmp_path / f"case-{i:03d}.nii.gz"
        write_volume(path, synthetic_volume(rng, slices=slices, rows=16, cols=16))
        paths.append(path)
        rows.append((f"case-{i:03d}", tasks[i % 4], i % 5,
                     f"1-{slices // 2}"))
    labels = write_labels(tmp_path / "labels.csv", rows)
    return paths, labels


class TestVolumeIds:
    def test_suffix_stripping(self, tmp_path):
        assert volume_id_for(tmp_path / "case-7.nii.gz") == "case-7"
        assert volume_id_for(tmp_path / "case-7.nii") == "case-7"
        assert volume_id_for(tmp_path / "case.7.nii.gz") == "case.7"


class TestExtract:
    def test_writes_store_and_reports(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng)
        out = tmp_path / "emb.vemb"
        job = ExtractionJob(tuple(paths), labels, model="proj-16",
                            out_embeddings=out)
        report = extract(job)
        assert report.extracted == ["case-000", "case-001", "case-002"]
        assert report.failures == []
        assert (report.dim, report.total_slices) == (16, 18)

        blob = out.read_bytes()
        magic, version, dim, count = struct.unpack_from("<4sIIQ", blob, 0)
        assert (magic, version, dim, count) == (b"VEMB", 1, 16, 18)

        meta = [json.loads(line) for line in
                default_metadata_path(out).read_text().splitlines()]
        assert [m["volume_id"] for m in meta] == ["case-000", "case-001",
                                                  "case-002"]
        assert all(m["num_slices"] == 6 for m in meta)
        assert meta[0]["organ_slice_indices"] == [1, 2, 3]

    def test_deterministic_across_runs(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        first, second = tmp_path / "a.vemb", tmp_path / "b.vemb"
        extract(ExtractionJob(tuple(paths), labels, model="proj-8",
                              out_embeddings=first))
        extract(ExtractionJob(tuple(paths), labels, model="proj-8",
                              out_embeddings=second))
        assert first.read_bytes() == second.read_bytes()

    def test_bad_volume_skipped_not_fatal(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        broken = tmp_path / "case-666.nii"
        broken.write_bytes(b"not a scan")
        job = ExtractionJob((paths[0], broken, paths[1]), labels,
                            model="proj-8", out_embeddings=tmp_path / "e.vemb")
        report = extract(job)
        assert report.extracted == ["case-000", "case-001"]
        assert len(report.failures) == 1
        assert report.failures[0][0].endswith("case-666.nii")

    def test_missing_labels_row_is_a_failure(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        orphan = tmp_path / "case-999.nii.gz"
        write_volume(orphan, synthetic_volume(rng, slices=2, rows=8, cols=8))
        job = ExtractionJob((orphan, paths[0]), labels, model="proj-8",
                            out_embeddings=tmp_path / "e.vemb")
        report = extract(job)
        assert report.extracted == ["case-000"]
        assert "no labels row" in report.failures[0][1]

    def test_organ_index_beyond_volume_is_a_failure(self, tmp_path, rng):
        path = tmp_path / "case-000.nii.gz"
        write_volume(path, synthetic_volume(rng, slices=3, rows=8, cols=8))
        labels = write_labels(tmp_path / "labels.csv",
                              [("case-000", "colon", "1", "0-5")])
        with pytest.raises(InputError, match="every volume failed"):
            extract(ExtractionJob((path,), labels, model="proj-8",
                                  out_embeddings=tmp_path / "e.vemb"))

    def test_all_failures_abort_without_output(self, tmp_path, rng):
        _, labels = make_inputs(tmp_path, rng, count=1)
        missing = tmp_path / "case-000-not-there.nii"
        out = tmp_path / "e.vemb"
        with pytest.raises(InputError, match="every volume failed"):
            extract(ExtractionJob((missing,), labels, model="proj-8",
                                  out_embeddings=out))
        assert not out.exists()

    def test_unknown_model_aborts(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=1)
        with pytest.raises(ModelError):
            extract(ExtractionJob(tuple(paths), labels, model="resnet-wish",
                                  out_embeddings=tmp_path / "e.vemb"))

    def test_empty_job_rejected(self, tmp_path):
        with pytest.raises(InputError, match="no input volumes"):
            ExtractionJob((), tmp_path / "labels.csv")


class TestCli:
    def test_clean_run(self, tmp_path, rng, capsys):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        out = tmp_path / "cli.vemb"
        code = main(["extract", *map(str, paths), "--labels", str(labels),
                     "--model", "proj-8", "--size", "16", "--out", str(out)])
        assert code == 0
        assert out.exists()
        assert default_metadata_path(out).exists()
        captured = capsys.readouterr()
        assert "extracted 2 volumes" in captured.out
        assert "dim 8" in captured.out

    def test_matches_library_output(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        lib_out = tmp_path / "lib.vemb"
        extract(ExtractionJob(tuple(paths), labels, model="proj-8",
                              preprocess=Preprocess(target_size=16),
                              out_embeddings=lib_out))
        cli_out = tmp_path / "cli.vemb"
        assert main(["extract", *map(str, paths), "--labels", str(labels),
                     "--model", "proj-8", "--size", "16",
                     "--out", str(cli_out)]) == 0
        assert lib_out.read_bytes() == cli_out.read_bytes()

    def test_partial_failure_exit_code(self, tmp_path, rng, capsys):
        paths, labels = make_inputs(tmp_path, rng, count=2)
        broken = tmp_path / "case-777.nii"
        broken.write_bytes(b"junk")
        code = main(["extract", str(paths[0]), str(broken), str(paths[1]),
                     "--labels", str(labels), "--model", "proj-8",
                     "--size", "16", "--out", str(tmp_path / "p.vemb")])
        assert code == 3
        assert "skipped" in capsys.readouterr().err

    def test_input_error_exit_code(self, tmp_path, rng, capsys):
        paths, _ = make_inputs(tmp_path, rng, count=1)
        code = main(["extract", str(paths[0]),
                     "--labels", str(tmp_path / "missing.csv"),
                     "--model", "proj-8", "--out", str(tmp_path / "x.vemb")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_explicit_metadata_path(self, tmp_path, rng):
        paths, labels = make_inputs(tmp_path, rng, count=1)
        meta = tmp_path / "custom-meta.jsonl"
        code = main(["extract", str(paths[0]), "--labels", str(labels),
                     "--model", "proj-8", "--size", "16",
                     "--out", str(tmp_path / "x.vemb"),
                     "--out-metadata", str(meta)])
        assert code == 0
        assert meta.exists()

    def test_unknown_flag(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["extract", "v.nii", "--frobnicate"])
        assert excinfo.value.code == 2
