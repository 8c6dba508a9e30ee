import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hilbertdoa.beamform import design_bank_analytic, design_bank_snn
from hilbertdoa.geometry import ArrayGeometry, DoaGrid
from hilbertdoa.hilbert import SthtKernel
from hilbertdoa.signalgen import gen_chirp, gen_sinusoid

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def geom():
    return ArrayGeometry.circular(7, 0.045)


@pytest.fixture(scope="session")
def grid449():
    return DoaGrid.uniform(449)


@pytest.fixture(scope="session")
def chirp_template():
    return gen_chirp(1500.0, 2500.0, 0.4)


@pytest.fixture(scope="session")
def analytic_bank(geom, grid449, chirp_template):
    """Wideband complex bank (STHT, 10 ms kernel) used across test modules."""
    return design_bank_analytic(chirp_template, geom, grid449, transform="stht",
                                kernel=SthtKernel.from_duration(10), band=(1500.0, 2500.0))


@pytest.fixture(scope="session")
def snn_bank(geom, grid449, chirp_template):
    return design_bank_snn(chirp_template, geom, grid449, kernel=SthtKernel.from_duration(10))


@pytest.fixture(scope="session")
def narrowband_bank_full(geom, grid449):
    return design_bank_analytic(gen_sinusoid(2000.0, 0.4), geom, grid449, transform="full")


@pytest.fixture(scope="session")
def wideband_bank_full(geom, grid449, chirp_template):
    return design_bank_analytic(chirp_template, geom, grid449, transform="full")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
