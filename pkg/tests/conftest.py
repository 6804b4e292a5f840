import numpy as np
import pytest

from dpassivity.case import DATA_DIR, fixture_path, load_case
from dpassivity.network import operating_point

_ACCEPTANCE = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    _ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[n]
        tag = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} [{tag}] {title}: {detail}")


@pytest.fixture(scope="session")
def three_bus():
    return load_case(fixture_path("three_bus.json"))


@pytest.fixture(scope="session")
def three_bus_lossless():
    return load_case(fixture_path("three_bus_lossless.json"))


@pytest.fixture(scope="session")
def three_bus_tight():
    return load_case(fixture_path("three_bus_tight.json"))


@pytest.fixture(scope="session")
def three_bus_cross():
    return load_case(fixture_path("three_bus_cross.json"))


@pytest.fixture(scope="session")
def three_bus_weak():
    return load_case(fixture_path("three_bus_weak.json"))


@pytest.fixture(scope="session")
def case118():
    return load_case(DATA_DIR / "case118.m", "matpower", DATA_DIR / "case118_devices.json")


@pytest.fixture(scope="session")
def op_three_bus(three_bus):
    return operating_point(three_bus)


@pytest.fixture(scope="session")
def op_lossless(three_bus_lossless):
    return operating_point(three_bus_lossless)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
