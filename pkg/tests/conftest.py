import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uamo.model import Couplings, Frequency

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


@pytest.fixture
def golden():
    return Frequency.real(GOLDEN)


@pytest.fixture
def supercritical():
    return Couplings(0.6, 0.8)


@pytest.fixture
def subcritical():
    return Couplings(0.8, 0.6)


# -- acceptance verdicts: one line per criterion, repeated in the terminal summary ----

_VERDICTS: dict = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
