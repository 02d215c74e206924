import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

ACCEPTANCE_LINES = []


@contextmanager
def criterion(number: int, title: str, limit: float = None):
    """Record one acceptance line; fails the test if ``limit`` seconds are exceeded."""
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        if limit is not None and elapsed >= limit:
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, limit {limit}s")
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        ACCEPTANCE_LINES.append(f"FAIL  criterion {number:>2}: {title} ({elapsed:.2f}s) -- {exc}")
        raise
    ACCEPTANCE_LINES.append(f"PASS  criterion {number:>2}: {title} ({elapsed:.2f}s)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def three_sigma(p: float, n: int) -> float:
    return 3.0 * math.sqrt(p * (1 - p) / n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
