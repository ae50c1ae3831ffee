import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion -> (passed, detail), filled by tests in test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record():
    """``record(criterion, passed, detail)`` stores the outcome, then asserts it."""
    def _record(criterion, passed, detail=""):
        ACCEPTANCE[criterion] = (bool(passed), detail)
        assert passed, f"{criterion}: {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, (passed, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
