import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from yoto.geometry import StereoCamera


@pytest.fixture
def cam():
    return StereoCamera(focal_px=600.0, principal_point=(320.0, 240.0), baseline_m=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotations(rng, n):
    return Rotation.random(n, random_state=rng.integers(2**31)).as_matrix()


# criterion id -> (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
