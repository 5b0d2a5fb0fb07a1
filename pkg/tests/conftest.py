from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from taskloop.program import parse_program

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def reference_text() -> str:
    return (DATA / "reference_program.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def reference_program(reference_text):
    return parse_program(reference_text)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"AC{criterion:<2} {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
