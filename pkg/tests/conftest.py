import numpy as np
import pytest

from panolayout.scenes import generate_scene

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scenes():
    r = np.random.default_rng(99)
    return [generate_scene(r, n_corners=n) for n in (4, 6, 8, 10, 12, 4, 6, 8)]
