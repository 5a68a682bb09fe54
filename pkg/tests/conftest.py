from __future__ import annotations

import time

import pytest

from twolayer import PhysParams, continue_to_amplitude

# one line per acceptance criterion, printed again at the end of the session
ACCEPTANCE_LINES: list[str] = []

# every converged solution produced by the acceptance suite, for the
# unused-equation consistency check
CONVERGED: list[tuple[str, object, PhysParams]] = []

# wall-clock seconds spent building each solution fixture
BUILD_SECONDS: dict[str, float] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def remember(label: str, sol, params: PhysParams) -> None:
    CONVERGED.append((label, sol, params))


def _timed(label: str, params: PhysParams, A: float, N: int = 64):
    t0 = time.perf_counter()
    sol = continue_to_amplitude(params, A, N)
    BUILD_SECONDS[label] = time.perf_counter() - t0
    remember(label, sol, params)
    return sol


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def base_params() -> PhysParams:
    return PhysParams(2.0, 0.5, 0.3)


@pytest.fixture(scope="session")
def sol_a02(base_params):
    return _timed("A=0.2", base_params, 0.2)


@pytest.fixture(scope="session")
def sol_a04(base_params):
    return _timed("A=0.4", base_params, 0.4)


@pytest.fixture(scope="session")
def bore_params() -> PhysParams:
    return PhysParams(0.2, 0.3, 0.525)


@pytest.fixture(scope="session")
def bore(bore_params):
    return _timed("bore", bore_params, 0.73873)
