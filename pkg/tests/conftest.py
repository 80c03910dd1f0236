import json
import math
import pathlib

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ionladder.crystal import TrapConfig, equilibrium_positions

ORACLE = pathlib.Path(__file__).parent / "oracle" / "values.json"

settings.register_profile("ionladder", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ionladder")

OMEGA_Z = 2 * math.pi * 1e6

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def record(criterion, name, passed, detail):
    ACCEPTANCE.setdefault(criterion, []).append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[criterion]
        verdict = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        details = "; ".join(f"{n}: {'ok' if p else 'FAIL'} ({d})" for n, p, d in parts)
        terminalreporter.write_line(f"criterion {criterion:>2}: {verdict}  {details}")


@pytest.fixture(scope="session")
def oracle():
    return json.loads(ORACLE.read_text())


@pytest.fixture(scope="session")
def triangle_trap():
    return TrapConfig(1.43 * OMEGA_Z, 20 * OMEGA_Z, OMEGA_Z)


@pytest.fixture(scope="session")
def triangle(triangle_trap):
    return equilibrium_positions(triangle_trap, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
