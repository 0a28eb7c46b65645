import pytest

from hdap.fleet import FleetConfig
from hdap.model_space import chain_model
from hdap.pipeline import HdapConfig
from hdap.search.ncs import NcsConfig
from hdap.surrogate.gbrt import GbrtParams


@pytest.fixture(scope="session")
def small_model():
    return chain_model([16, 24, 12, 20], seed=0)


@pytest.fixture(scope="session")
def small_cfg():
    return HdapConfig(T=2, ncs=NcsConfig(n=4, G=6), fleet=FleetConfig(n_devices=18), gbrt=GbrtParams(n_rounds=40),
                      samples=60, mape_compare=False, min_pts=4)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
