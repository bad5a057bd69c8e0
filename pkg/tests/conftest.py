import numpy as np
import pytest

from starspec.eos import EquationOfState, Polytrope, WhiteDwarf
from starspec.equilibrium import solve_profile


class TwoTermPolytrope(EquationOfState):
    """P = rho^(3/2) + rho^(5/4): soft (gamma = 5/4) near vacuum, stiffer
    (gamma = 3/2) at high density, so M(mu) has an interior minimum."""

    gamma1 = 1.25
    name = "two-term"

    def _pressure(self, r):
        return r**1.5 + r**1.25

    def _dpressure(self, r):
        return 1.5 * r**0.5 + 1.25 * r**0.25

    def _d2pressure(self, r):
        return 0.75 * r**-0.5 + 0.3125 * r**-0.75

    def _enthalpy(self, r):
        return 3.0 * r**0.5 + 5.0 * r**0.25

    def _rho_from_enthalpy(self, h):
        # h = 3 y^2 + 5 y with y = rho^(1/4)
        y = (-5.0 + np.sqrt(25.0 + 12.0 * h)) / 6.0
        return y**4


@pytest.fixture(scope="session")
def prof125():
    return solve_profile(Polytrope(1.0, 1.25), 1.0)


@pytest.fixture(scope="session")
def prof15():
    return solve_profile(Polytrope(1.0, 1.5), 1.0)


@pytest.fixture(scope="session")
def prof_wd():
    return solve_profile(WhiteDwarf(1.0, 1.0), 1.0)


@pytest.fixture(scope="session")
def prof2():
    return solve_profile(Polytrope(1.0, 2.0), 1.0)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
