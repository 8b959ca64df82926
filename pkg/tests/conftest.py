import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from magshell import systems

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def heis():
    return systems.make_system("heisenberg")


@pytest.fixture(scope="session")
def psl2():
    return systems.make_system("psl2")


@pytest.fixture(scope="session")
def sol():
    return systems.make_system("sol")


@pytest.fixture(scope="session")
def torus():
    return systems.make_system("torus", 2)


@pytest.fixture(scope="session")
def torus4():
    J = np.zeros((4, 4))
    J[0, 1], J[1, 0] = 2.0, -2.0
    J[2, 3], J[3, 2] = 1.0, -1.0
    return systems.MagneticSystem.torus(J)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
