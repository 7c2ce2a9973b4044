import pytest

from mikado.geometry import default_detector
from mikado.schedule import load_default_schedule
from mikado.synth import GenConfig, generate_event


@pytest.fixture(scope="session")
def detector():
    return default_detector()


@pytest.fixture(scope="session")
def schedule():
    return load_default_schedule()


@pytest.fixture(scope="session")
def small_event(detector):
    return generate_event(GenConfig(n_primaries=30, rng_seed=3), 1, detector)


@pytest.fixture(scope="session")
def clean_event(detector):
    return generate_event(GenConfig(n_primaries=50, rng_seed=5).noiseless(), 1, detector)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
