import math

import numpy as np
import pytest

from teleus.se3 import Pose, angular_error, compose, inverse

from conftest import random_pose


def test_identity_compose():
    p = Pose.from_axis_angle([0, 0, 1], 0.7, trans=(0.1, -0.2, 0.3))
    q = compose(Pose.identity(), p)
    np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-15)


def test_compose_inverse_is_identity(rng):
    for _ in range(100):
        p = random_pose(rng)
        ident = compose(p, inverse(p))
        np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-12)


def test_translation_compose():
    a = Pose.from_translation(1, 0, 0)
    b = Pose.from_translation(0, 2, 0)
    c = compose(a, b)
    np.testing.assert_allclose(c.trans, [1, 2, 0], atol=1e-15)


def test_compose_matches_matrix_oracle(rng):
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        np.testing.assert_allclose(compose(a, b).matrix(),
                                   a.matrix() @ b.matrix(), atol=1e-12)


def test_compose_associative(rng):
    for _ in range(100):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        np.testing.assert_allclose(left.matrix(), right.matrix(), atol=1e-12)


def test_quaternion_stays_normalized(rng):
    p = random_pose(rng)
    for _ in range(10000):
        p = compose(p, Pose.from_axis_angle([0, 1, 0], 1e-3))
    assert abs(np.linalg.norm(p.quat) - 1.0) < 1e-9


def test_matrix_round_trip(rng):
    for _ in range(200):
        p = random_pose(rng)
        q = Pose.from_matrix(p.matrix())
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-12)


def test_angular_error_basics():
    p = Pose.from_axis_angle([0, 0, 1], 0.3)
    assert angular_error(p, p) == 0.0
    a = Pose.identity()
    b = Pose.from_axis_angle([0, 0, 1], math.pi / 2)
    assert angular_error(a, b) == pytest.approx(math.pi / 2, abs=1e-12)


def test_angular_error_matches_quat_dot_oracle(rng):
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        expected = 2 * math.acos(min(1.0, abs(float(np.dot(a.quat, b.quat)))))
        assert angular_error(a, b) == pytest.approx(expected, abs=1e-10)


def test_angular_error_is_a_metric(rng):
    for _ in range(200):
        a, b, c = (random_pose(rng) for _ in range(3))
        assert angular_error(a, b) == pytest.approx(angular_error(b, a), abs=1e-12)
        assert angular_error(a, c) <= angular_error(a, b) + angular_error(b, c) + 1e-9
    p = random_pose(rng)
    assert angular_error(p, p) < 1e-12


def test_serialization_round_trips(rng):
    p = random_pose(rng)
    assert len(p.to_bytes()) == 56
    q = Pose.from_bytes(p.to_bytes())
    np.testing.assert_array_equal(p.to_array(), q.to_array())
    r = Pose.from_json(p.to_json())
    np.testing.assert_allclose(p.to_array(), r.to_array(), atol=1e-15)
