"""Teleoperation calibration: command transform chain, clutch re-indexing,
and camera-to-robot (hand-eye) solving from marker observations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se3 import Pose, compose, angular_error


class DegenerateObservations(ValueError):
    """Marker observations do not constrain all three rotation axes."""


@dataclass
class CalibrationSet:
    """Transforms relating the operator's device to the follower robot.

    hand_eye: camera frame in follower base frame
    probe:    ultrasound probe in flange frame
    offset:   alignment/clutch offset applied in front of the chain
              (identity until the alignment phase completes)
    """

    hand_eye: Pose = field(default_factory=Pose.identity)
    probe: Pose = field(default_factory=Pose.identity)
    offset: Pose = field(default_factory=Pose.identity)


@dataclass(frozen=True)
class MarkerObservation:
    """One tracked marker sample used for the hand-eye solve."""

    marker_in_flange: Pose   # known by construction
    marker_in_camera: Pose   # measured by the camera
    flange_in_base: Pose     # robot forward kinematics at observation time


def expert_to_follower(calib: CalibrationSet, hand: Pose) -> Pose:
    """Commanded follower flange pose for a given operator hand pose.

    Chain: offset ∘ hand_eye ∘ hand ∘ probe⁻¹.
    """
    return compose(compose(calib.offset, calib.hand_eye),
                   compose(hand, calib.probe.inverse()))


def reindex_offset(offset: Pose, pre_pose: Pose, post_pose: Pose) -> Pose:
    """Updated clutch offset so the follower does not jump after re-indexing.

    pre_pose is the last commanded pose before clutching; post_pose is the pose
    that would be commanded with the old offset after un-clutching. The new
    offset makes the next command equal pre_pose exactly.
    """
    return compose(pre_pose, compose(offset.inverse(), post_pose).inverse())


@dataclass(frozen=True)
class HandEyeResult:
    camera_in_base: Pose
    rotation_rms: float     # rad, residual over observations
    translation_rms: float  # m


def solve_hand_eye(observations: list[MarkerObservation]) -> HandEyeResult:
    """Solve flange∘marker = X∘camera_marker for the camera pose X in base frame.

    Separable estimate: rotation first from a quaternion least-squares
    (largest eigenvector of the accumulated outer-product matrix, which is
    immune to quaternion sign flips), then translation by linear least squares.
    """
    if len(observations) < 3:
        raise DegenerateObservations("need at least 3 observations")

    marker_in_base = [compose(o.flange_in_base, o.marker_in_flange)
                      for o in observations]
    marker_in_cam = [o.marker_in_camera for o in observations]

    _check_axis_span(marker_in_cam)

    # Each observation gives q_base_i ~ q_X ⊗ q_cam_i, i.e. W_i q_X = q_base_i
    # with W_i the right-multiplication matrix of q_cam_i.
    k = np.zeros((4, 4))
    for mb, mc in zip(marker_in_base, marker_in_cam):
        w = _right_mult_matrix(mc.quat)
        v = w.T @ mb.quat
        k += np.outer(v, v)
    eigvals, eigvecs = np.linalg.eigh(k)
    q_x = eigvecs[:, -1]

    r_x = Pose(quat=q_x).rotation_matrix()
    # t_base_i = R_X t_cam_i + t_X  =>  identity design matrix, mean residual.
    deltas = np.array([mb.trans - r_x @ mc.trans
                       for mb, mc in zip(marker_in_base, marker_in_cam)])
    t_x = deltas.mean(axis=0)

    x = Pose(quat=q_x, trans=t_x)
    rot_rms = float(np.sqrt(np.mean([
        angular_error(mb, compose(x, mc)) ** 2
        for mb, mc in zip(marker_in_base, marker_in_cam)])))
    trans_rms = float(np.sqrt(np.mean(np.sum((deltas - t_x) ** 2, axis=1))))
    return HandEyeResult(camera_in_base=x, rotation_rms=rot_rms,
                         translation_rms=trans_rms)


def _right_mult_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix W with W p = p ⊗ q for quaternions p, q."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])


def _check_axis_span(poses: list[Pose], tol: float = 1e-6) -> None:
    """Relative rotations between observations must span all three axes."""
    axes = []
    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            q_rel = compose(poses[j], poses[i].inverse()).quat
            v = q_rel[1:].copy()
            if q_rel[0] < 0:
                v = -v
            axes.append(v)
    if not axes:
        raise DegenerateObservations("no relative rotations")
    m = np.array(axes)
    s = np.linalg.svd(m, compute_uv=False)
    if len(s) < 3 or s[2] <= tol * max(s[0], 1e-12):
        raise DegenerateObservations("rotation axes do not span 3-D")
