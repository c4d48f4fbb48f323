"""Collects the acceptance verdicts and prints one line per criterion after the run."""
import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Call ``verdict(n, ok, detail)`` once per criterion."""
    def record(n: int, ok: bool, detail: str = "") -> bool:
        VERDICTS[n] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
