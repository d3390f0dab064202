import math

import numpy as np
import pytest

from ghzcavity.calibrate import calibrate
from ghzcavity.hamiltonians import DeviceModel
from ghzcavity.protocol import build_ghz_schedule


def uniform_model(n, g_j=0.2, ratio=10.0, **kw):
    return DeviceModel.uniform(n, g_j=g_j, ratio=ratio, **kw)


def reference_schedule(n, lam=0.022, delta=0.2, rabi=10.0, **kw):
    """Six-device operating point: g_j = 0.2 g, Delta_c,j = 10 g_j, delta = g_j."""
    model = uniform_model(n, **kw)
    return build_ghz_schedule(model, calibrate(model, delta, lam), rabi, rabi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def schedule2():
    return reference_schedule(2)


@pytest.fixture(scope="session")
def schedule3():
    return reference_schedule(3)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


PI = math.pi


# -- acceptance bookkeeping ----------------------------------------------------

ACCEPTANCE_RESULTS = {}


class Criterion:
    """Context manager recording one acceptance criterion as PASS or FAIL."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        import time

        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._t0
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2} {status}  {self.title} [{elapsed:.1f} s] {detail}"
        ACCEPTANCE_RESULTS[self.number] = line
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
