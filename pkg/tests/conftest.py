import pytest

from dynseg.geometry import CameraIntrinsics, NoiseParams, PoseSE3, so3_exp


@pytest.fixture
def intr():
    return CameraIntrinsics.kinect()


@pytest.fixture
def noise():
    return NoiseParams()


def random_pose(rng, rot_scale=1.0, trans_scale=1.0) -> PoseSE3:
    return PoseSE3(so3_exp(rng.normal(size=3) * rot_scale), rng.normal(size=3) * trans_scale)


# (criterion, passed, detail) lines printed after the run by the acceptance suite
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
