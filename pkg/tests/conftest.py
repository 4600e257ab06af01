import numpy as np
import pytest

from resonant_nf.candidates import solve_candidates
from resonant_nf.chart import dnls_square_cell, expand_hamiltonian
from resonant_nf.normal_form import candidate_system, normalize


@pytest.fixture(scope="session")
def dnls():
    return dnls_square_cell()


@pytest.fixture(scope="session")
def dnls_H0(dnls):
    return expand_hamiltonian(dnls, None, 3, 3)


@pytest.fixture(scope="session")
def dnls_nf2(dnls_H0):
    return normalize(dnls_H0, 2)


@pytest.fixture(scope="session")
def dnls_nf3(dnls_H0):
    return normalize(dnls_H0, 3)


@pytest.fixture(scope="session")
def dnls_F2(dnls_nf2):
    return candidate_system(dnls_nf2)


@pytest.fixture(scope="session")
def dnls_candidates(dnls_F2):
    return solve_candidates(dnls_F2, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


IN_OUT_OF_PHASE = [(0.0, 0.0, np.pi), (np.pi, np.pi, 0.0), (0.0, np.pi, np.pi), (np.pi, 0.0, 0.0)]


# ------------------------------------------------------------ acceptance
ACCEPTANCE: dict = {}


def record(criterion: int, part: str, ok: bool, detail: str = "") -> None:
    """Store and print one acceptance check; a criterion passes when all its parts do."""
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p[1] for p in parts)
        failed = [p[0] for p in parts if not p[1]]
        line = f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}"
        if failed:
            line += "  (failing: " + "; ".join(failed) + ")"
        terminalreporter.write_line(line)
        for part, pok, detail in parts:
            terminalreporter.write_line(f"    {'ok  ' if pok else 'FAIL'} {part}: {detail}")
