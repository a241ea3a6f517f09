import numpy as np
import pytest
from hypothesis import settings

from tansurf.scene import bundled_scene

settings.register_profile("repo", deadline=None, derandomize=True, print_blob=True)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def scenes():
    names = ["example9", "example9_torsion", "helix", "cubic", "umbrella", "umbrella_chart",
             "quartic4", "planar", "halfplane", "random_quadratic"]
    return {n: bundled_scene(n) for n in names}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
