import numpy as np
import pytest

from stochqbm import make_time_grid, preset_kernels

DRUDE = {"gamma": 0.1, "cutoff": 2.0, "temperature": 1.0}
CL = {"gamma": 0.2, "temperature": 2.0}


@pytest.fixture(scope="session")
def drude_small():
    """Drude bath on a coarse grid, cheap enough for exhaustive oracles."""
    return preset_kernels("drude_nonlocal", DRUDE, make_time_grid(0.0, 4.0, 201))


@pytest.fixture(scope="session")
def cl_small():
    return preset_kernels("caldeira_leggett_highT", CL, make_time_grid(0.0, 6.0, 241))


@pytest.fixture(scope="session")
def free_small():
    return preset_kernels("free", {}, make_time_grid(0.0, 2 * np.pi, 241))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
