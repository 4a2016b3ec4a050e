from __future__ import annotations

import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion; returns the pass flag."""

    def record(number: int, title: str, passed: bool, detail: str, elapsed: float, budget: float) -> bool:
        ok = bool(passed) and elapsed < budget
        timing = f"{elapsed:.1f}s < {budget:g}s" if elapsed < budget else f"{elapsed:.1f}s OVER {budget:g}s"
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail} ({timing})"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
