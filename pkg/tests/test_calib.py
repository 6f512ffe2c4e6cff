import math

import numpy as np
import pytest

from teleus.calib import (CalibrationSet, DegenerateObservations,
                          MarkerObservation, expert_to_follower,
                          reindex_offset, solve_hand_eye)
from teleus.se3 import Pose, angular_error, compose

from conftest import random_pose


def chain_oracle(calib, hand):
    """Independent 4x4 homogeneous matrix evaluation of the command chain."""
    m = (calib.offset.matrix() @ calib.hand_eye.matrix()
         @ hand.matrix() @ np.linalg.inv(calib.probe.matrix()))
    return m


class TestExpertToFollower:
    def test_all_identity(self):
        out = expert_to_follower(CalibrationSet(), Pose.identity())
        np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-15)

    def test_single_term_chain(self):
        calib = CalibrationSet(hand_eye=Pose.from_translation(1, 0, 0))
        out = expert_to_follower(calib, Pose.identity())
        np.testing.assert_allclose(out.trans, [1, 0, 0], atol=1e-15)

    def test_matches_matrix_oracle(self, rng):
        for _ in range(1000):
            calib = CalibrationSet(hand_eye=random_pose(rng),
                                   probe=random_pose(rng),
                                   offset=random_pose(rng))
            hand = random_pose(rng)
            out = expert_to_follower(calib, hand)
            np.testing.assert_allclose(out.matrix(), chain_oracle(calib, hand),
                                       atol=1e-12)


class TestReindexOffset:
    def test_no_motion_during_clutch(self, rng):
        offset, pose = random_pose(rng), random_pose(rng)
        new = reindex_offset(offset, pose, pose)
        np.testing.assert_allclose(new.matrix(), offset.matrix(), atol=1e-12)

    def test_hand_evaluated_case(self):
        new = reindex_offset(Pose.identity(), Pose.identity(),
                             Pose.from_translation(0, 0, 0.1))
        np.testing.assert_allclose(new.trans, [0, 0, -0.1], atol=1e-15)
        np.testing.assert_allclose(new.quat, [1, 0, 0, 0], atol=1e-15)

    def test_no_jump_identity(self, rng):
        for _ in range(1000):
            calib = CalibrationSet(hand_eye=random_pose(rng),
                                   probe=random_pose(rng),
                                   offset=random_pose(rng))
            hand = random_pose(rng)
            pre = expert_to_follower(calib, hand)
            hand_moved = random_pose(rng)
            post = expert_to_follower(calib, hand_moved)
            calib.offset = reindex_offset(calib.offset, pre, post)
            resumed = expert_to_follower(calib, hand_moved)
            np.testing.assert_allclose(resumed.matrix(), pre.matrix(), atol=1e-12)


def make_observations(rng, truth, n, noise_t=0.0, noise_r=0.0):
    obs = []
    for _ in range(n):
        flange = random_pose(rng)
        marker = random_pose(rng, trans_scale=0.1)
        marker_in_base = compose(flange, marker)
        cam = compose(truth.inverse(), marker_in_base)
        if noise_t or noise_r:
            axis = rng.normal(size=3)
            cam = compose(cam, Pose.from_axis_angle(
                axis, rng.normal(0, noise_r),
                trans=rng.normal(0, noise_t, size=3)))
        obs.append(MarkerObservation(marker_in_flange=marker,
                                     marker_in_camera=cam,
                                     flange_in_base=flange))
    return obs


class TestSolveHandEye:
    def test_noise_free_recovery(self, rng):
        for n in (3, 5, 12):
            truth = random_pose(rng)
            result = solve_hand_eye(make_observations(rng, truth, n))
            assert angular_error(result.camera_in_base, truth) < 1e-9
            assert np.linalg.norm(result.camera_in_base.trans - truth.trans) < 1e-9
            # acos conditioning near zero angle limits the residual metric itself
            assert result.rotation_rms < 1e-9

    def test_noisy_recovery_95th_percentile(self, rng):
        rot_errs, trans_errs = [], []
        for _ in range(100):
            truth = random_pose(rng)
            result = solve_hand_eye(make_observations(
                rng, truth, 20, noise_t=1e-3, noise_r=math.radians(0.5)))
            rot_errs.append(angular_error(result.camera_in_base, truth))
            trans_errs.append(np.linalg.norm(result.camera_in_base.trans - truth.trans))
        assert np.percentile(rot_errs, 95) < math.radians(1.0)
        assert np.percentile(trans_errs, 95) < 5e-3

    def test_too_few_observations(self, rng):
        truth = random_pose(rng)
        with pytest.raises(DegenerateObservations):
            solve_hand_eye(make_observations(rng, truth, 2))

    def test_shared_rotation_axis_is_degenerate(self, rng):
        truth = random_pose(rng)
        obs = []
        for angle in (0.0, 0.4, 1.1):
            flange = Pose.from_axis_angle([0, 0, 1], angle, trans=(0.1, 0, 0.2))
            marker = Pose.from_translation(0, 0, 0.05)
            cam = compose(truth.inverse(), compose(flange, marker))
            obs.append(MarkerObservation(marker_in_flange=marker,
                                         marker_in_camera=cam,
                                         flange_in_base=flange))
        with pytest.raises(DegenerateObservations):
            solve_hand_eye(obs)
