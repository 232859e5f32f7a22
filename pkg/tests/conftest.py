import pytest

from mergesim.engine import run
from mergesim.scenario import load_scenario_file

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_scenario():
    return load_scenario_file("merge_5x5")


@pytest.fixture(scope="session")
def optimal_trace(reference_scenario):
    return run(reference_scenario.with_overrides(mode="optimal"))


@pytest.fixture(scope="session")
def baseline_trace(reference_scenario):
    return run(reference_scenario.with_overrides(mode="baseline"))
