import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def verdict():
    """Record an acceptance criterion's outcome; printed again in the terminal summary."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[number] = (name, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} [{number}] {name}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} [{number}] {name}: {detail}")
