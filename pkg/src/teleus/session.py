"""Operator-side session logic: a finite state machine over alignment,
clutch/indexing, and teleoperation.

The FSM turns haptic-device poses into follower pose commands. Alignment
initializes the offset so the first command equals the current follower
pose; clutching freezes command output and re-indexes the offset on release
so the follower never jumps.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum

from .calib import CalibrationSet, expert_to_follower, reindex_offset
from .se3 import Pose, angular_error, compose

logger = logging.getLogger(__name__)

DEFAULT_ALIGN_THRESHOLD = 0.05  # rad


class Mode(str, Enum):
    IDLE = "idle"
    ALIGNING = "aligning"
    TELEOP = "teleop"
    CLUTCHED = "clutched"


@dataclass(frozen=True)
class Event:
    kind: str
    hand: Pose | None = None
    follower: Pose | None = None

    @staticmethod
    def start() -> "Event":
        return Event("start")

    @staticmethod
    def stop() -> "Event":
        return Event("stop")

    @staticmethod
    def button_down() -> "Event":
        return Event("button_down")

    @staticmethod
    def button_up() -> "Event":
        return Event("button_up")

    @staticmethod
    def pose_update(hand: Pose, follower: Pose | None = None) -> "Event":
        return Event("pose_update", hand=hand, follower=follower)


@dataclass(frozen=True)
class SessionState:
    calib: CalibrationSet
    mode: Mode = Mode.IDLE
    align_threshold: float = DEFAULT_ALIGN_THRESHOLD
    last_commanded: Pose | None = None
    last_hand: Pose | None = None
    last_alignment_error: float | None = None

    @staticmethod
    def initial(calib: CalibrationSet,
                align_threshold: float = DEFAULT_ALIGN_THRESHOLD
                ) -> "SessionState":
        return SessionState(calib=calib, align_threshold=align_threshold)


def _mapped_pose(calib: CalibrationSet, hand: Pose) -> Pose:
    """Hand pose mapped through the calibration chain without the offset."""
    return compose(calib.hand_eye, compose(hand, calib.probe.inverse()))


def alignment_error(state: SessionState, hand: Pose,
                    follower: Pose) -> float:
    """Angular error (rad) between the mapped hand and follower orientation."""
    return angular_error(_mapped_pose(state.calib, hand), follower)


def handle_event(state: SessionState,
                 event: Event) -> tuple[SessionState, Pose | None]:
    """Advance the FSM; invalid transitions are logged no-ops."""
    mode = state.mode
    if event.kind == "stop":
        return dataclasses.replace(state, mode=Mode.IDLE,
                                   last_alignment_error=None), None
    if event.kind == "start":
        if mode is Mode.IDLE:
            return dataclasses.replace(state, mode=Mode.ALIGNING), None
        logger.warning("ignoring 'start' in mode %s", mode.value)
        return state, None
    if event.kind == "button_down":
        if mode is Mode.TELEOP:
            return dataclasses.replace(state, mode=Mode.CLUTCHED), None
        logger.warning("ignoring 'button_down' in mode %s", mode.value)
        return state, None
    if event.kind == "button_up":
        if mode is Mode.CLUTCHED:
            calib = state.calib
            if state.last_hand is not None and state.last_commanded is not None:
                post = compose(calib.offset,
                               _mapped_pose(calib, state.last_hand))
                offset = reindex_offset(calib.offset, state.last_commanded,
                                        post)
                calib = dataclasses.replace(calib, offset=offset)
            return dataclasses.replace(state, mode=Mode.TELEOP,
                                       calib=calib), None
        logger.warning("ignoring 'button_up' in mode %s", mode.value)
        return state, None
    if event.kind == "pose_update":
        if event.hand is None:
            logger.warning("pose_update without a hand pose")
            return state, None
        state = dataclasses.replace(state, last_hand=event.hand)
        if mode is Mode.ALIGNING:
            if event.follower is None:
                return state, None
            err = alignment_error(state, event.hand, event.follower)
            state = dataclasses.replace(state, last_alignment_error=err)
            if err < state.align_threshold:
                # Offset initialization: the first teleop command equals the
                # current follower pose, so engagement is jump-free.
                mapped = _mapped_pose(state.calib, event.hand)
                offset = compose(event.follower, mapped.inverse())
                calib = dataclasses.replace(state.calib, offset=offset)
                return dataclasses.replace(state, mode=Mode.TELEOP,
                                           calib=calib), None
            return state, None
        if mode is Mode.TELEOP:
            command = expert_to_follower(state.calib, event.hand)
            return dataclasses.replace(state, last_commanded=command), command
        # Idle and Clutched track the hand but emit nothing.
        return state, None
    logger.warning("unknown event kind %r", event.kind)
    return state, None
