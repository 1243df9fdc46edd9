import numpy as np
import pytest

from cbfed.basis import galerkin_basis
from cbfed.spectral import TorusConfig, random_field, taylor_green

# (criterion, passed, detail) rows filled by the acceptance suite
ACCEPTANCE_ROWS = []


@pytest.fixture(scope="session")
def cfg2():
    return TorusConfig(2, 2 * np.pi, 32)


@pytest.fixture(scope="session")
def cfg_small():
    return TorusConfig(2, 2 * np.pi, 16)


@pytest.fixture(scope="session")
def cfg3():
    return TorusConfig(3, 2 * np.pi, 12)


@pytest.fixture(scope="session")
def basis2(cfg2):
    return galerkin_basis(cfg2, None)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture(scope="session")
def tg(cfg2):
    return taylor_green(cfg2)


@pytest.fixture
def field2(cfg2, rng):
    return random_field(cfg2, rng)


@pytest.fixture(scope="session")
def acceptance_report():
    def record(criterion, passed, detail=""):
        line = f"[acceptance {criterion}] {'PASS' if passed else 'FAIL'} {detail}".rstrip()
        print(line)
        ACCEPTANCE_ROWS.append(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_ROWS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_ROWS:
            terminalreporter.write_line(line)
