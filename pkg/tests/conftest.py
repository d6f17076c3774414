import numpy as np
import pytest

from scle.correlation import SpectralDensity, TimeGrid, build_kernels
from scle.noise import build_noise_plan


@pytest.fixture(scope="session")
def debye():
    return SpectralDensity("ohmic_debye", 1.0, 0.5)


@pytest.fixture(scope="session")
def short_grid():
    return TimeGrid.from_span(0.02, 4.0)


@pytest.fixture(scope="session")
def short_kernels(debye, short_grid):
    return build_kernels(debye, 1.0, short_grid)


@pytest.fixture(scope="session")
def short_plan(short_kernels):
    return build_noise_plan(short_kernels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        request.config.acceptance_lines.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit
