import numpy as np
import pytest

from demn.corpus import generate_corpus, split_dataset


@pytest.fixture(scope="session")
def default_corpus():
    # 30 / 10 / 10 episodes, 8 pairs and 5 questions each
    return generate_corpus(7, 50, 8, 5)


@pytest.fixture(scope="session")
def default_splits(default_corpus):
    return split_dataset(default_corpus)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(3, 6, 4, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "CRITERIA", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
