import numpy as np
import pytest

from cpa.core import RelationalMatrix


def random_row_normalized(rng, n1, n2):
    v = rng.random((n1, n2))
    return RelationalMatrix(v / v.sum(axis=1, keepdims=True), row_normalized=True)


def two_block_matrix():
    """4x4 matrix with two 2x2 diagonal blocks of 0.5 and zeros elsewhere."""
    v = np.zeros((4, 4))
    v[:2, :2] = 0.5
    v[2:, 2:] = 0.5
    return RelationalMatrix(v, row_normalized=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Collect one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
