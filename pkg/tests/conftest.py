from __future__ import annotations

import numpy as np
import pytest

from fraclogi.grid import build_absorption, build_grid
from fraclogi.nonlocal_op import OperatorParams, assemble


@pytest.fixture(scope="session")
def ref_grid():
    return build_grid(1, (-1.0, 1.0), (-0.4, 0.4), 201)


@pytest.fixture(scope="session")
def ref_op(ref_grid):
    return assemble(ref_grid, OperatorParams(0.5, 2.0))


@pytest.fixture(scope="session")
def ref_b(ref_grid):
    return build_absorption(ref_grid, 1.0)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(1, (-1.0, 1.0), (-0.4, 0.4), 21)


@pytest.fixture(scope="session")
def small_grid_2d():
    return build_grid(2, ((-1.0, 1.0), (-1.0, 1.0)), ((-0.4, 0.4), (-0.4, 0.4)), 11)


def small_op(grid, s=0.5, p=2.0):
    return assemble(grid, OperatorParams(s, p))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240611))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
