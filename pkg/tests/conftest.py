import warnings

import numpy as np
import pytest

from mffield import doe, sim

CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def criteria():
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, msg = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture(scope="session")
def vff_small():
    """VFF dataset with 8 HF and 16 LF snapshots, no ground."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sim.generate_case(doe.nested_lhs(8, 16, sim.DOMAIN, 7), "no_ground")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
