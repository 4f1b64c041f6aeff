import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparseqc.control import EnvelopeSpace, FrequencyGrid
from sparseqc.dynamics import TimeGrid
from sparseqc.models import TwoPesSpec, build_three_level, build_two_level, build_two_pes

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def three_level():
    return build_three_level()


@pytest.fixture(scope="session")
def two_level():
    return build_two_level(0.0, 3.0)


@pytest.fixture(scope="session")
def small_pes():
    return build_two_pes(TwoPesSpec(n_x=32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_envelopes(space: EnvelopeSpace, n_atoms: int, rng) -> np.ndarray:
    """Random complex coefficients that conform to ``space``."""
    c = rng.standard_normal((n_atoms, space.n_nodes)) + 1j * rng.standard_normal((n_atoms, space.n_nodes))
    if space.kind == "h1_0":
        c[:, [0, -1]] = 0.0
    return c


def small_grid(n_steps=64, t_final=10.0) -> TimeGrid:
    return TimeGrid(t_final, n_steps)


def small_freqs(n=5, lo=2.0, hi=5.0, centers=None) -> FrequencyGrid:
    return FrequencyGrid.uniform(lo, hi, n, centers)


# -- acceptance summary --

ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
