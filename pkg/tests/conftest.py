import numpy as np
import pytest

from fracblow.ground_state import petviashvili_solve
from fracblow.spectral import Field, ModelParams, make_grid

# verdict lines appended by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gs_cubic_quintic():
    """d=1, s=1, alpha=4: the classical quintic soliton."""
    return petviashvili_solve(ModelParams.critical(1, 1.0), make_grid(1, 512, 16.0))


@pytest.fixture(scope="session")
def gs06():
    return petviashvili_solve(ModelParams.critical(1, 0.6), make_grid(1, 1024, 16.0))


@pytest.fixture(scope="session")
def gs06_wide():
    # wide box: periodic images of the algebraic tails drop below 1e-4
    return petviashvili_solve(ModelParams.critical(1, 0.6), make_grid(1, 2048, 128.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_random(g, rng, modes=6, complex_=True):
    """Band-limited random field."""
    idx = np.abs(np.fft.fftfreq(g.n, d=1.0 / g.n))
    keep = np.ones(g.shape, dtype=bool)
    for ax in range(g.d):
        shp = [1] * g.d
        shp[ax] = g.n
        keep &= (idx <= modes).reshape(shp)
    c = rng.standard_normal(g.shape) + (1j * rng.standard_normal(g.shape) if complex_ else 0)
    return Field(g, np.fft.ifftn(c * keep) * g.n**g.d / 10)
