import time

import pytest

from dqa.artifacts import build_bundle
from dqa.corpus import SyntheticCorpusConfig, generate_synthetic
from dqa.evaluation import run_benchmark

# The pinned desk-scale benchmark: 6 causes (two subject triples), 30
# scenarios, three run seeds. Acceptance criteria run against this fixture.
BENCH_GEN_SEED = 11
BENCH_CONFIG = SyntheticCorpusConfig(
    seed=BENCH_GEN_SEED,
    num_causes=6,
    tickets_per_cause=(40, 60),
    noise_rate=0.0,
    scenarios_per_cause=5,
)
BENCH_SEEDS = (1, 2, 3)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SyntheticCorpusConfig(
        seed=7, num_causes=5, tickets_per_cause=(40, 40), noise_rate=0.0
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def bundle(small_corpus):
    tickets, kb, _ = small_corpus
    return build_bundle(tickets, kb, k_clusters=5, seed=7)


@pytest.fixture(scope="session")
def bench_corpus():
    return generate_synthetic(BENCH_CONFIG)


@pytest.fixture(scope="session")
def bench_result(bench_corpus):
    tickets, kb, scenarios = bench_corpus
    t0 = time.monotonic()
    result = run_benchmark(tickets, kb, scenarios, seeds=BENCH_SEEDS, jobs=4)
    result.report["_wall_seconds"] = time.monotonic() - t0
    return result


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {status}")
