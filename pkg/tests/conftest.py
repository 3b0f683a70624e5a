from __future__ import annotations

import pytest

# (criterion number, title, ok, detail) recorded by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS.append((number, title, bool(ok), detail))
        print(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
