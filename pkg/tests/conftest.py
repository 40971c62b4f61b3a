from __future__ import annotations

import numpy as np
import pytest

from gccsynth import problemfile
from gccsynth.model import CostFunctional, UncertainSystem, scalar_blocks


@pytest.fixture(scope="session")
def ex1():
    return problemfile.load("example1")


@pytest.fixture(scope="session")
def ex2():
    return problemfile.load("example2")


def random_system(rng: np.random.Generator, nx: int = 3, nu: int = 2, structure=None,
                  dzw_norm: float = 0.0, output_feedback: bool = False,
                  rho: float = 0.9) -> UncertainSystem:
    """Random plant with a stable-ish nominal A and small uncertainty channels."""
    structure = tuple(structure) if structure is not None else scalar_blocks(2)
    n_p = sum(b.np for b in structure)
    n_q = sum(b.nq for b in structure)
    a = rng.standard_normal((nx, nx))
    a *= rho / max(1e-9, np.max(np.abs(np.linalg.eigvals(a))))
    bu = rng.standard_normal((nx, nu))
    bw = 0.3 * rng.standard_normal((nx, n_p))
    cz = 0.3 * rng.standard_normal((n_q, nx))
    dzu = 0.1 * rng.standard_normal((n_q, nu))
    dzw = rng.standard_normal((n_q, n_p))
    if dzw.size and dzw_norm > 0:
        dzw *= dzw_norm / np.linalg.norm(dzw, 2)
    else:
        dzw = np.zeros((n_q, n_p))
    if output_feedback:
        ny = nx + 1
        cy = np.vstack([np.eye(nx), rng.standard_normal((1, nx))])
    else:
        ny = nx
        cy = np.eye(nx)
    dyw = np.zeros((ny, n_p))
    return UncertainSystem(a, bu, bw, cy, dyw, cz, dzu, dzw, structure)


def identity_cost(nx: int, nu: int) -> CostFunctional:
    return CostFunctional.from_weights(np.eye(nx), np.eye(nu))



# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


class AcceptanceRecorder:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.checks: list[tuple[bool, str]] = []

    def check(self, ok: bool, detail: str) -> bool:
        self.checks.append((bool(ok), detail))
        return bool(ok)

    def note(self, detail: str) -> None:
        self.checks.append((True, "[info] " + detail))

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        parts = "; ".join(("" if ok else "FAILED ") + d for ok, d in self.checks)
        return f"criterion {self.number} [{self.title}]: {verdict} - {parts}"

    def finish(self) -> None:
        ACCEPTANCE_LINES[self.number] = self.line()
        print(self.line())
        failed = [d for ok, d in self.checks if not ok]
        assert not failed, "; ".join(failed)


@pytest.fixture
def criterion():
    return AcceptanceRecorder


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
