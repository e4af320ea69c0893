"""Shared fixtures: small corpora the suites reuse."""

from __future__ import annotations

import numpy as np
import pytest

from volsearch import Corpus, desk_spec, generate_synthetic_corpus

from factories import experiments_spec


@pytest.fixture(scope="session")
def desk_corpus() -> Corpus:
    return generate_synthetic_corpus(desk_spec(), seed=2024)


@pytest.fixture(scope="session")
def experiments_corpus() -> Corpus:
    return generate_synthetic_corpus(experiments_spec(), seed=11)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    # one visible line per acceptance criterion, pass or fail; the embedder
    # suite announces its own criteria
    if (report.when == "call" and "test_acceptance" in report.nodeid
            and "embedder" not in report.nodeid):
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {verdict} {name}", flush=True)
