import numpy as np
import pytest

from teleus.calib import CalibrationSet, expert_to_follower
from teleus.se3 import Pose, angular_error, compose, pose_distance
from teleus.session import (Event, Mode, SessionState, alignment_error,
                            handle_event)
from tests.conftest import random_pose


def random_calib(rng):
    return CalibrationSet(hand_eye=random_pose(rng),
                          probe=random_pose(rng, trans_scale=0.1),
                          offset=random_pose(rng))


def engaged_session(rng):
    """Session driven through alignment into Teleop with a random setup."""
    calib = random_calib(rng)
    state = SessionState.initial(calib)
    state, _ = handle_event(state, Event.start())
    hand = random_pose(rng)
    # follower chosen exactly at the mapped orientation: alignment succeeds
    follower = compose(calib.hand_eye, compose(hand, calib.probe.inverse()))
    state, out = handle_event(state, Event.pose_update(hand, follower))
    assert state.mode is Mode.TELEOP
    return state, hand, follower


class TestBasicTransitions:
    def test_idle_pose_update_emits_nothing(self, rng):
        state = SessionState.initial(random_calib(rng))
        state, out = handle_event(state, Event.pose_update(random_pose(rng)))
        assert out is None
        assert state.mode is Mode.IDLE

    def test_start_enters_aligning(self, rng):
        state = SessionState.initial(random_calib(rng))
        state, out = handle_event(state, Event.start())
        assert state.mode is Mode.ALIGNING and out is None

    def test_stop_returns_to_idle_from_anywhere(self, rng):
        state, hand, _ = engaged_session(rng)
        state, out = handle_event(state, Event.stop())
        assert state.mode is Mode.IDLE and out is None

    def test_misaligned_stays_aligning(self, rng):
        calib = random_calib(rng)
        state = SessionState.initial(calib)
        state, _ = handle_event(state, Event.start())
        hand = random_pose(rng)
        mapped = compose(calib.hand_eye, compose(hand, calib.probe.inverse()))
        twist = compose(mapped, Pose.from_axis_angle([1, 0, 0], 0.2))
        state, out = handle_event(state, Event.pose_update(hand, twist))
        assert state.mode is Mode.ALIGNING and out is None
        assert state.last_alignment_error == pytest.approx(0.2, abs=1e-9)

    def test_invalid_events_are_noops(self, rng):
        state = SessionState.initial(random_calib(rng))
        for event in (Event.button_up(), Event.button_down(), Event.start()):
            before = state
            state, out = handle_event(state, event)
            if event.kind == "start":
                continue
            assert out is None
            assert state == before


class TestEngagement:
    def test_first_command_equals_follower_pose(self, rng):
        state, hand, follower = engaged_session(rng)
        state, out = handle_event(state, Event.pose_update(hand, follower))
        assert out is not None
        assert pose_distance(out, follower) < 1e-12

    def test_teleop_delegates_to_calibration_chain(self, rng):
        state, hand, _ = engaged_session(rng)
        for _ in range(20):
            hand = random_pose(rng)
            state, out = handle_event(state, Event.pose_update(hand))
            want = expert_to_follower(state.calib, hand)
            assert pose_distance(out, want) < 1e-12


class TestClutch:
    def test_clutched_emits_nothing(self, rng):
        state, hand, _ = engaged_session(rng)
        state, _ = handle_event(state, Event.pose_update(hand))
        state, out = handle_event(state, Event.button_down())
        assert state.mode is Mode.CLUTCHED and out is None
        for _ in range(10):
            state, out = handle_event(state,
                                      Event.pose_update(random_pose(rng)))
            assert out is None

    def test_no_jump_over_1000_clutch_cycles(self, rng):
        state, hand, _ = engaged_session(rng)
        state, pre = handle_event(state, Event.pose_update(hand))
        for _ in range(1000):
            state, _ = handle_event(state, Event.button_down())
            # re-position freely while clutched
            for _ in range(3):
                moved = random_pose(rng)
                state, out = handle_event(state, Event.pose_update(moved))
                assert out is None
            state, _ = handle_event(state, Event.button_up())
            assert state.mode is Mode.TELEOP
            state, post = handle_event(state, Event.pose_update(moved))
            assert pose_distance(post, pre) < 1e-12
            # keep moving a bit, then next cycle
            hand = random_pose(rng)
            state, pre = handle_event(state, Event.pose_update(hand))

    def test_button_up_without_motion(self, rng):
        state, hand, _ = engaged_session(rng)
        state, pre = handle_event(state, Event.pose_update(hand))
        state, _ = handle_event(state, Event.button_down())
        state, _ = handle_event(state, Event.button_up())
        state, post = handle_event(state, Event.pose_update(hand))
        assert pose_distance(post, pre) < 1e-12


class TestAlignmentError:
    def test_exact_match_is_zero(self, rng):
        calib = random_calib(rng)
        state = SessionState.initial(calib)
        hand = random_pose(rng)
        follower = compose(calib.hand_eye,
                           compose(hand, calib.probe.inverse()))
        assert alignment_error(state, hand, follower) < 1e-12

    def test_quarter_turn(self, rng):
        calib = random_calib(rng)
        state = SessionState.initial(calib)
        hand = random_pose(rng)
        mapped = compose(calib.hand_eye,
                         compose(hand, calib.probe.inverse()))
        follower = compose(mapped, Pose.from_axis_angle([0, 0, 1], np.pi / 2))
        assert alignment_error(state, hand, follower) == pytest.approx(
            np.pi / 2, abs=1e-12)

    def test_matches_angular_error_oracle(self, rng):
        calib = random_calib(rng)
        state = SessionState.initial(calib)
        for _ in range(50):
            hand, follower = random_pose(rng), random_pose(rng)
            mapped = compose(calib.hand_eye,
                             compose(hand, calib.probe.inverse()))
            want = angular_error(mapped, follower)
            assert alignment_error(state, hand, follower) == pytest.approx(
                want, abs=1e-12)
