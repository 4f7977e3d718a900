import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import time
from contextlib import contextmanager

import pytest

_CRITERIA: dict[int, tuple[str, bool, float, float]] = {}


@contextmanager
def _criterion(number: int, title: str, budget: float):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < budget
        _CRITERIA[number] = (title, ok and within, elapsed, budget)
        line = f"AC{number:<2} {'PASS' if ok and within else 'FAIL'}  {title}  ({elapsed:.2f}s / {budget:.0f}s budget)"
        print(line)
    assert within, f"criterion {number} took {elapsed:.1f}s, budget {budget}s"


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, elapsed, budget = _CRITERIA[number]
        terminalreporter.write_line(
            f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}  ({elapsed:.2f}s / {budget:.0f}s budget)"
        )
