import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _lines(config):
    if not hasattr(config, "_criteria_lines"):
        config._criteria_lines = []
    return config._criteria_lines


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion and print it."""

    def emit(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail}"
        print(line)
        _lines(request.config).append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = _lines(config)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
