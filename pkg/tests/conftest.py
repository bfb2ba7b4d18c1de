import numpy as np
import pytest

from t2plan import synth

A1_TRUTH = synth.GroundTruth(E=0.2, A=400.0, alpha=0.34, B=410.0, beta=0.28, G=1.5, gamma=0.6)
A2_TRUTH = synth.GroundTruth(
    E=1.69, A=406.4, alpha=0.34, B=410.7, beta=0.28, theta=(3.2, 4.0, 0.9, 1.0, -0.5)
)
CHINCHILLA_TRUTH = synth.GroundTruth(E=1.7, A=400.0, alpha=0.34, B=410.0, beta=0.28)


@pytest.fixture(scope="session")
def grid():
    return synth.generate_grid()


@pytest.fixture(scope="session")
def a1_targets(grid):
    return synth.generate_pass_targets(A1_TRUTH, grid)


@pytest.fixture(scope="session")
def a2_targets(grid):
    return synth.generate_pass_targets(A2_TRUTH, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Acceptance criterion number -> (title, passed); filled by test_acceptance.py.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, passed = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{num:2d}] {title}")
