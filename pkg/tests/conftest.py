import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (title, passed, seconds, limit)
ACCEPTANCE: dict[int, tuple[str, bool, float, float | None]] = {}


@contextmanager
def _record(number: int, title: str, limit: float | None = None):
    t0 = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        within = limit is None or elapsed < limit
        ACCEPTANCE[number] = (title, ok and within, elapsed, limit)
    if not within:
        pytest.fail(f"criterion {number} took {elapsed:.2f}s, limit {limit:g}s")


@pytest.fixture
def criterion():
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, elapsed, limit = ACCEPTANCE[number]
        budget = f"< {limit:g}s" if limit is not None else "no limit"
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:2d}. {title}  ({elapsed:.2f}s, {budget})")
