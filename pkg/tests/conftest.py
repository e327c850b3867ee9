import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def small_params():
    from vmlimit.params import RegularizationParams

    return RegularizationParams(64, 0.3, 4.0)


@pytest.fixture(scope="session")
def small_kernel(small_params):
    from vmlimit.kernels import SmoothedWaveKernel

    return SmoothedWaveKernel.from_params(small_params)


@pytest.fixture(scope="session")
def density():
    from vmlimit.initial_data import InitialDensity

    return InitialDensity()


@pytest.fixture(scope="session")
def small_fields(density, small_kernel):
    from vmlimit.initial_data import build_initial_fields

    return build_initial_fields(density, small_kernel.eta)


def radial_quad(f, upper, pieces=64, order=48):
    """Composite Gauss-Legendre on [0, upper]."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, pieces + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        r = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * f(r))
    return total


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one summary line per acceptance criterion; echoed at the end of the run."""

    def log(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
