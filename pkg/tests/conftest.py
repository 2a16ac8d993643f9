import math

import numpy as np
import pytest

from sidewise.geometry import (ConformalBumpMetric, ConstantMetric, IdentityMetric, LinearX1Metric, annulus,
                               disc, pocket)


@pytest.fixture(scope="session")
def ring():
    return annulus(1.0, 2.0)


@pytest.fixture(scope="session")
def unit_disc():
    return disc(1.0)


@pytest.fixture(scope="session")
def box():
    """Rounded rectangle [0, 4] x [0, 2]; its bottom edge is flat for 0.3 <= x <= 3.7."""
    return pocket(with_pocket=False)


@pytest.fixture(scope="session")
def flat():
    return IdentityMetric()


def variable_metrics():
    return [
        ConstantMetric([[2.0, 0.3], [0.3, 1.0]]),
        LinearX1Metric(0.3, 2, (-2.5, 2.5)),
        ConformalBumpMetric(0.3, (0.5, 0.5), 0.7),
    ]


def angle_between(u, v):
    return math.atan2(u[0] * v[1] - u[1] * v[0], float(np.dot(u, v)))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
