import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, str] = {}


class Criterion:
    """Times one acceptance criterion and records a single PASS/FAIL line."""

    def __init__(self, number: int, title: str, limit_s: float):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.t0 = time.perf_counter()

    def finish(self, ok: bool, detail: str) -> None:
        elapsed = time.perf_counter() - self.t0
        in_time = elapsed <= self.limit_s
        passed = bool(ok) and in_time
        timing = f"{elapsed:.2f}s <= {self.limit_s:g}s" if in_time else f"{elapsed:.2f}s OVER {self.limit_s:g}s"
        line = f"{'PASS' if passed else 'FAIL'} criterion {self.number:>2} {self.title}: {detail} [{timing}]"
        _ACCEPTANCE[self.number] = line
        print(line)
        assert passed, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
