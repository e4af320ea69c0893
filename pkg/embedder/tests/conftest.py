"""Shared fixtures for the extraction suite."""

from __future__ import annotations

import numpy as np
import pytest

from volembed.nifti import write_volume

from fabricate import synthetic_volume


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(404)


@pytest.fixture()
def volume_file(tmp_path, rng):
    path = tmp_path / "case-000.nii.gz"
    write_volume(path, synthetic_volume(rng))
    return path


def pytest_runtest_logreport(report):
    # acceptance-gate visibility, same convention as the engine's suite
    if report.when == "call" and "test_acceptance_embedder" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {verdict} {name}", flush=True)
