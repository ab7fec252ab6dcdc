import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graspsynth import BUNDLED_MESHES, shapes  # noqa: E402
from graspsynth.camera import CameraIntrinsics  # noqa: E402

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def cube():
    return shapes.box((1.0, 1.0, 1.0))


@pytest.fixture
def intr100():
    return CameraIntrinsics(100.0, 100.0, 112.0, 112.0, 224, 224)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bundled():
    return BUNDLED_MESHES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
