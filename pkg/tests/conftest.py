import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ambislam import se3
from ambislam.se3 import Pose
from ambislam.simulator import LandmarkRecord, MeasurementLog, OdometryRecord

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TIGHT = np.diag([1e-6] * 6)
VIEW_NOISE = np.diag([0.05 ** 2] * 6)
VIEW_LANDMARK = Pose.from_xyz_yaw(1.0, 2.0, 0.0, 0.0)
# hypothesis rotations (degrees about the landmark's z axis) per measurement;
# only the third set singles out the true orientation
VIEW_SETS = ((180.0, 0.0), (0.0, 110.0), (0.0, -110.0))


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return se3.exp(np.concatenate([rng.normal(0, 0.8, 3), rng.normal(0, scale, 3)]))


def spun(z: Pose, degrees: float) -> Pose:
    return Pose(z.rotation @ se3.rot_z(math.radians(degrees)), z.translation)


def three_view_log() -> MeasurementLog:
    """Three robot poses on the x axis observing one landmark ambiguously."""
    xs = [Pose.from_xyz_yaw(float(i), 0.0, 0.0, 0.0) for i in range(3)]
    mlog = MeasurementLog(3, xs[0], TIGHT, meta={"kind": "three_view"})
    for t, angles in enumerate(VIEW_SETS):
        if t:
            mlog.odometry.append(OdometryRecord(t, xs[t - 1].between(xs[t]), TIGHT))
        z = xs[t].between(VIEW_LANDMARK)
        mlog.landmarks.append(LandmarkRecord(t, 1, "mug", [spun(z, a) for a in angles],
                                             [1.0, 1.0], VIEW_NOISE, angles.index(0.0)))
    return mlog


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
