"""Embedding store byte layout and metadata sidecar."""

import json
import struct

import numpy as np
import pytest

from volembed.errors import InputError
from volembed.store import (VolumeEmbeddings, default_metadata_path,
                            write_store)


def unit_rows(rng, n, dim):
    rows = rng.standard_normal((n, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows.astype(np.float32)


def volume(rng, volume_id, *, n=3, dim=4, task="colon", stage=1, organ=(0,)):
    return VolumeEmbeddings(volume_id, task, stage, unit_rows(rng, n, dim),
                            frozenset(organ))


class TestByteLayout:
    def test_single_record_by_hand(self, tmp_path):
        rows = np.array([[1.0]], dtype=np.float32)
        out = tmp_path / "one.vemb"
        write_store([VolumeEmbeddings("volume-000000000001", "liver", 0, rows,
                                      frozenset())], out)
        blob = out.read_bytes()
        # header 20 bytes, record 2 + 19 + 4 + 4 = 29
        assert len(blob) == 49
        magic, version, dim, count = struct.unpack_from("<4sIIQ", blob, 0)
        assert (magic, version, dim, count) == (b"VEMB", 1, 1, 1)
        id_len = struct.unpack_from("<H", blob, 20)[0]
        assert id_len == 19
        assert blob[22:41] == b"volume-000000000001"
        assert struct.unpack_from("<I", blob, 41)[0] == 0
        assert blob[45:49] == struct.pack("<f", 1.0)

    def test_volumes_sorted_and_slices_ascending(self, tmp_path, rng):
        out = tmp_path / "s.vemb"
        write_store([volume(rng, "b", n=2, dim=2), volume(rng, "a", n=1, dim=2)],
                    out)
        blob = out.read_bytes()
        seen = []
        offset = 20
        for _ in range(3):
            id_len = struct.unpack_from("<H", blob, offset)[0]
            vid = blob[offset + 2:offset + 2 + id_len].decode()
            index = struct.unpack_from("<I", blob, offset + 2 + id_len)[0]
            seen.append((vid, index))
            offset += 2 + id_len + 4 + 2 * 4
        assert seen == [("a", 0), ("b", 0), ("b", 1)]
        assert offset == len(blob)

    def test_rewrite_is_byte_identical(self, tmp_path, rng):
        vols = [volume(rng, f"v{i}", n=2, dim=3) for i in range(4)]
        first, second = tmp_path / "a.vemb", tmp_path / "b.vemb"
        write_store(vols, first)
        write_store(vols, second)
        assert first.read_bytes() == second.read_bytes()
        assert (default_metadata_path(first).read_bytes()
                == default_metadata_path(second).read_bytes())


class TestMetadata:
    def test_sidecar_content(self, tmp_path, rng):
        out = tmp_path / "m.vemb"
        write_store([volume(rng, "case-1", n=3, task="lung", stage=4,
                            organ=(2, 0))], out)
        meta = default_metadata_path(out)
        assert meta.name == "m.meta.jsonl"
        lines = meta.read_text("utf-8").splitlines()
        assert len(lines) == 1
        row = json.loads(lines[0])
        assert row == {"volume_id": "case-1", "task": "lung",
                       "tumor_stage": 4, "num_slices": 3,
                       "organ_slice_indices": [0, 2]}

    def test_one_line_per_volume_in_id_order(self, tmp_path, rng):
        out = tmp_path / "m.vemb"
        write_store([volume(rng, "z"), volume(rng, "a"), volume(rng, "m")], out)
        ids = [json.loads(line)["volume_id"]
               for line in default_metadata_path(out).read_text().splitlines()]
        assert ids == ["a", "m", "z"]

    def test_explicit_metadata_path(self, tmp_path, rng):
        out = tmp_path / "store.vemb"
        meta = tmp_path / "elsewhere.jsonl"
        write_store([volume(rng, "v")], out, meta)
        assert meta.exists()
        assert not default_metadata_path(out).exists()


class TestValidation:
    def test_record_checks(self, rng):
        with pytest.raises(InputError, match="non-empty 2-D"):
            VolumeEmbeddings("v", "colon", 0, np.zeros(4, np.float32),
                             frozenset())
        with pytest.raises(InputError, match="non-empty 2-D"):
            VolumeEmbeddings("v", "colon", 0, np.zeros((0, 4), np.float32),
                             frozenset())
        with pytest.raises(InputError, match="out of range"):
            VolumeEmbeddings("v", "colon", 0, unit_rows(rng, 2, 4),
                             frozenset({2}))

    def test_store_checks(self, tmp_path, rng):
        out = tmp_path / "x.vemb"
        with pytest.raises(InputError, match="no volumes"):
            write_store([], out)
        with pytest.raises(InputError, match="duplicate"):
            write_store([volume(rng, "v"), volume(rng, "v")], out)
        with pytest.raises(InputError, match="constant"):
            write_store([volume(rng, "a", dim=4), volume(rng, "b", dim=8)], out)
        assert not out.exists()

    def test_failed_write_leaves_no_partial_file(self, tmp_path, rng):
        target = tmp_path / "gone" / "x.vemb"
        write_store([volume(rng, "v")], target)
        assert target.exists()
        leftovers = [p for p in target.parent.iterdir()
                     if p.suffix not in (".vemb", ".jsonl")]
        assert leftovers == []
