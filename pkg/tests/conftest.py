from __future__ import annotations

import pytest

from tem_sdde.model import TABLE1, TABLE2, constant_segment
from tem_sdde.truncation import make_rule

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary hook prints them all."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((name, bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")


@pytest.fixture(scope="session")
def rule1():
    return make_rule(TABLE1, 2.0 / 3.0)


@pytest.fixture(scope="session")
def rule2():
    return make_rule(TABLE2, 2.0 / 3.0)


@pytest.fixture
def xi():
    return constant_segment(0.2)
