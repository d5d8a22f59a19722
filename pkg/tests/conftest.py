import numpy as np
import pytest

from gsslam.core import CameraIntrinsics, CameraPose, GaussianMap, quat_normalize


def random_map(rng, n, z=(1.5, 2.5), xy=0.5, radius=(0.05, 0.15), opacity=(0.2, 0.9)):
    return GaussianMap(
        rng.uniform([-xy, -xy, z[0]], [xy, xy, z[1]], size=(n, 3)),
        rng.uniform(0, 1, size=(n, 3)),
        rng.uniform(*radius, size=n),
        rng.uniform(*opacity, size=n),
    )


def random_pose(rng, rot=0.05, trans=0.05):
    q = quat_normalize(np.concatenate([[1.0], rng.normal(scale=rot, size=3)]))
    return CameraPose(q, rng.normal(scale=trans, size=3))


@pytest.fixture
def small_intr():
    return CameraIntrinsics(30.0, 30.0, 15.5, 15.5, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
