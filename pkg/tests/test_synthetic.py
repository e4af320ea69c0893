"""Synthetic corpus generator."""

import json

import numpy as np
import pytest

from volsearch import SyntheticSpec, Task, desk_spec, generate_synthetic_corpus
from volsearch.errors import ValidationError


class TestSpec:
    def test_desk_spec_counts(self):
        spec = desk_spec()
        per_task = {t: sum(c) for t, c in spec.stage_counts.items()}
        assert per_task[Task.COLON] == 13
        assert per_task[Task.LIVER] == 13
        assert per_task[Task.LUNG] == 6
        assert per_task[Task.PANCREAS] == 28
        assert spec.total_volumes == 60

    def test_validation(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(dim=0)
        with pytest.raises(ValidationError):
            SyntheticSpec(slice_range=(10, 5))
        with pytest.raises(ValidationError):
            SyntheticSpec(organ_fraction=(0.0, 0.5))
        with pytest.raises(ValidationError):
            SyntheticSpec(noise_sigma=-1.0)
        with pytest.raises(ValidationError):
            SyntheticSpec(stage_counts={Task.COLON: (1, 1, 1, 1)})  # needs 5 entries

    def test_json_round_trip(self, tmp_path):
        spec = desk_spec()
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(spec.to_json_dict()))
        assert SyntheticSpec.from_json_file(path) == spec


class TestGeneration:
    def test_deterministic(self):
        spec = desk_spec()
        a = generate_synthetic_corpus(spec, seed=7)
        b = generate_synthetic_corpus(spec, seed=7)
        assert a.volume_ids == b.volume_ids
        for vid in a.volume_ids:
            assert a[vid].embeddings.tobytes() == b[vid].embeddings.tobytes()
            assert a[vid].organ_slice_indices == b[vid].organ_slice_indices

    def test_seed_changes_output(self):
        spec = desk_spec()
        a = generate_synthetic_corpus(spec, seed=7)
        b = generate_synthetic_corpus(spec, seed=8)
        assert any(a[v].embeddings.tobytes() != b[v].embeddings.tobytes()
                   for v in a.volume_ids)

    def test_counts_and_stages(self):
        spec = desk_spec()
        corpus = generate_synthetic_corpus(spec, seed=0)
        assert len(corpus) == 60
        for task, counts in spec.stage_counts.items():
            for stage, want in enumerate(counts):
                got = sum(1 for vid in corpus.volume_ids
                          if corpus[vid].task is task
                          and corpus[vid].tumor_stage == stage)
                assert got == want

    def test_rows_unit_norm(self):
        corpus = generate_synthetic_corpus(desk_spec(), seed=3)
        for vid in corpus.volume_ids:
            norms = np.linalg.norm(corpus[vid].embeddings.astype(np.float64), axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_organ_block_contiguous_and_sized(self):
        spec = desk_spec()
        corpus = generate_synthetic_corpus(spec, seed=5)
        lo, hi = spec.organ_fraction
        for vid in corpus.volume_ids:
            v = corpus[vid]
            organ = sorted(v.organ_slice_indices)
            assert organ, vid
            assert organ == list(range(organ[0], organ[-1] + 1))
            frac = len(organ) / v.num_slices
            # block length is rounded, so allow one slice of slack
            assert lo - 1 / v.num_slices <= frac <= hi + 1 / v.num_slices

    def test_stage_zero_has_no_tumor_signal(self):
        # with sigma 0 every slice sits exactly on its center, so a clean
        # volume's organ slices must all equal the organ center
        spec = SyntheticSpec(dim=16, noise_sigma=0.0,
                             stage_counts={t: (2, 1, 0, 0, 0) for t in Task})
        corpus = generate_synthetic_corpus(spec, seed=1)
        for task in Task:
            clean = [corpus[v] for v in corpus.volume_ids
                     if corpus[v].task is task and corpus[v].tumor_stage == 0]
            staged = [corpus[v] for v in corpus.volume_ids
                      if corpus[v].task is task and corpus[v].tumor_stage == 1]
            organ_rows = {r.embeddings[i].tobytes()
                          for r in clean for i in r.organ_slice_indices}
            assert len(organ_rows) == 1  # one shared organ center
            tumor_rows = {r.embeddings[i].tobytes()
                          for r in staged for i in r.organ_slice_indices}
            assert len(tumor_rows) > 1  # some organ slices moved to a tumor center

    def test_sigma_zero_slices_lie_on_centers(self):
        spec = SyntheticSpec(dim=8, noise_sigma=0.0, num_background_centers=2,
                             stage_counts={t: (1, 1, 0, 0, 0) for t in Task})
        corpus = generate_synthetic_corpus(spec, seed=9)
        distinct = {corpus[v].embeddings[i].tobytes()
                    for v in corpus.volume_ids
                    for i in range(corpus[v].num_slices)}
        # at most: 2 background + 4 organ + 4 stage-1 tumor centers
        assert len(distinct) <= 10

    def test_ids_serial_per_task(self):
        corpus = generate_synthetic_corpus(desk_spec(), seed=0)
        for task in Task:
            ids = [v for v in corpus.volume_ids if corpus[v].task is task]
            assert ids == [f"{task.value}-{i:03d}" for i in range(len(ids))]
