import warnings

import numpy as np
import pytest

from sopfdroop import grid, pce, wind


@pytest.fixture(scope="session")
def model():
    return grid.builtin_testcase()


@pytest.fixture(scope="session")
def mid_specs():
    return [wind.beta_spec(0.5, wind.DEFAULT_ZONE_STATS[wind.Zone.MID]),
            wind.beta_spec(0.45, wind.DEFAULT_ZONE_STATS[wind.Zone.MID])]


@pytest.fixture(scope="session")
def mid_basis(mid_specs):
    return pce.build_basis(mid_specs, 2)


@pytest.fixture(scope="session")
def mid_galerkin(model, mid_basis):
    return pce.galerkin_solve(model, mid_basis)


@pytest.fixture(autouse=True)
def _quiet_slsqp():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        yield


def half_wind(model):
    return np.array([0.5 * w.p_max for w in model.wind_farms])


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
