import numpy as np
import pytest

from teleus.se3 import Pose


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, trans_scale=1.0):
    q = rng.normal(size=4)
    return Pose(quat=q, trans=rng.uniform(-trans_scale, trans_scale, size=3))
