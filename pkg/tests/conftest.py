import numpy as np
import pytest

from skim.corpus import CorpusStore

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_store():
    texts = ["ab" * 700, "hello world. " * 120, "x" * 2048]
    return CorpusStore.from_texts(texts)


@pytest.fixture
def criterion():
    """``check(n, ok, detail)`` records one acceptance line, then asserts ``ok``."""

    def check(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[n] = line
        print(line)
        assert ok, line

    return check


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
