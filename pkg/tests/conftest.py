import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vehiclepose.geometry import CameraModel, Pose, rot_z
from vehiclepose.scenegen import NoiseConfig, make_rig, synthesize_scene
from vehiclepose.wireframe import canonical_model

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def axis_camera():
    """Camera at the origin looking down +z, fx = fy = 500, principal point (320, 320)."""
    return CameraModel((500.0, 500.0), (320.0, 320.0), (640, 640), np.eye(3), np.zeros(3))


@pytest.fixture
def rig():
    return make_rig(90.0, 8.0, 3.0, 500.0)


@pytest.fixture
def truth_pose():
    return Pose(rot_z(0.4), (0.3, -0.2, 0.0))


@pytest.fixture
def clean_scene(rig, truth_pose):
    return synthesize_scene(canonical_model(), truth_pose, rig, NoiseConfig(), "clean")


@pytest.fixture
def noisy_scene(rig, truth_pose):
    noise = NoiseConfig(pixel_sigma=2.0, outlier_rate=0.1, occluded_ids={0: {11, 12}}, seed=5)
    return synthesize_scene(canonical_model(), truth_pose, rig, noise, "noisy")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
