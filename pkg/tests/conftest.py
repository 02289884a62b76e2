import functools
import math
import time

import numpy as np
import pytest

from qddress.analysis import calibrate_effective_area
from qddress.model import SystemParameters

_ACCEPTANCE = []
_START = time.time()


@pytest.fixture(scope="session")
def params():
    return SystemParameters()


@functools.lru_cache(maxsize=None)
def theta_for(tau, lam_pi, detuning=0.0):
    """Pulse area reaching the effective area ``lam_pi * pi`` (cached per session)."""
    return calibrate_effective_area(SystemParameters(), tau, lam_pi * math.pi, detuning=detuning)


@pytest.fixture(scope="session")
def calibrated():
    return theta_for


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; printed now and in the summary."""

    def record(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
    terminalreporter.write_line(f"suite wall time: {time.time() - _START:.0f} s")
