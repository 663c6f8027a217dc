import numpy as np
import pytest

from ddsf import FilterConfig, SafetyFilter, Trajectory, benchmark_plant, symmetric_box

_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store a PASS/FAIL line for an acceptance criterion."""
    def record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])


def make_batch(seed=0, n0=200, tau_d=1):
    plant = benchmark_plant(tau_d)
    u = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n0, 1))
    return Trajectory(u, plant.simulate(u))


@pytest.fixture(scope="session")
def boxes():
    return symmetric_box(1.0), symmetric_box(1.0)


@pytest.fixture(scope="session")
def batch():
    return make_batch()


@pytest.fixture
def make_filter(batch, boxes):
    def build(**kwargs):
        U, Y = boxes
        return SafetyFilter.from_data(batch, FilterConfig(**kwargs), U, Y)
    return build
