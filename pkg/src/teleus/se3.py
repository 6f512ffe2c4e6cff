"""Rigid-body transforms as unit quaternion + translation.

Rotation is stored as a unit quaternion (w, x, y, z); rotation matrices are
computed on demand. Composition renormalizes the quaternion so long chains
do not drift off the unit sphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    return q / n


@dataclass(frozen=True)
class Pose:
    """A rigid transform: p_parent = R(quat) @ p_child + trans."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        t = np.asarray(self.trans, dtype=float).reshape(3)
        object.__setattr__(self, "quat", _normalize_quat(q))
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(trans=np.array([x, y, z], dtype=float))

    @staticmethod
    def from_axis_angle(axis, angle: float, trans=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        q = np.concatenate(([math.cos(half)], math.sin(half) * axis))
        return Pose(quat=q, trans=np.asarray(trans, dtype=float))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        r = m[:3, :3]
        # Shepperd's method: pick the largest diagonal combination.
        tr = np.trace(r)
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2.0
            q = np.array([0.25 * s,
                          (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s,
                          (r[1, 0] - r[0, 1]) / s])
        else:
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = math.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
            q = np.empty(4)
            q[0] = (r[k, j] - r[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (r[j, i] + r[i, j]) / s
            q[1 + k] = (r[k, i] + r[i, k]) / s
        return Pose(quat=q, trans=m[:3, 3].copy())

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.trans
        return m

    def apply(self, p) -> np.ndarray:
        """Map a point from the child frame into the parent frame."""
        return self.rotation_matrix() @ np.asarray(p, dtype=float) + self.trans

    def rotate(self, v) -> np.ndarray:
        """Rotate a direction vector (no translation)."""
        return self.rotation_matrix() @ np.asarray(v, dtype=float)

    def inverse(self) -> "Pose":
        q_inv = self.quat * np.array([1.0, -1.0, -1.0, -1.0])
        r_inv = self.rotation_matrix().T
        return Pose(quat=q_inv, trans=-(r_inv @ self.trans))

    def to_array(self) -> np.ndarray:
        """Flat [w, x, y, z, tx, ty, tz]."""
        return np.concatenate([self.quat, self.trans])

    @staticmethod
    def from_array(a) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(7)
        return Pose(quat=a[:4], trans=a[4:])

    def to_bytes(self) -> bytes:
        """7 little-endian float64: w, x, y, z, tx, ty, tz."""
        return self.to_array().astype("<f8").tobytes()

    @staticmethod
    def from_bytes(b: bytes) -> "Pose":
        return Pose.from_array(np.frombuffer(b, dtype="<f8", count=7))

    def to_json(self) -> list:
        return [float(v) for v in self.to_array()]

    @staticmethod
    def from_json(obj) -> "Pose":
        return Pose.from_array(obj)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.quat)) and np.all(np.isfinite(self.trans)))


def compose(a: Pose, b: Pose) -> Pose:
    """Transform composition a∘b; quaternion is renormalized."""
    wa, xa, ya, za = a.quat
    wb, xb, yb, zb = b.quat
    q = np.array([
        wa * wb - xa * xb - ya * yb - za * zb,
        wa * xb + xa * wb + ya * zb - za * yb,
        wa * yb - xa * zb + ya * wb + za * xb,
        wa * zb + xa * yb - ya * xb + za * wb,
    ])
    return Pose(quat=q, trans=a.apply(b.trans))


def inverse(p: Pose) -> Pose:
    return p.inverse()


def angular_error(a: Pose, b: Pose) -> float:
    """Geodesic rotation distance in [0, pi].

    Uses the quaternion chord (theta = 4 asin(|qa - qb|/2)), which stays
    well-conditioned for nearly identical rotations where acos of the dot
    product loses ~8 digits.
    """
    qa, qb = a.quat, b.quat
    if float(np.dot(qa, qb)) < 0.0:
        qb = -qb
    chord = float(np.linalg.norm(qa - qb)) / 2.0
    return 4.0 * math.asin(min(chord, 1.0))


def pose_distance(a: Pose, b: Pose) -> float:
    """Translation distance (m) plus geodesic rotation distance (rad)."""
    return float(np.linalg.norm(a.trans - b.trans)) + angular_error(a, b)


def rotvec_between(current: Pose, target: Pose) -> np.ndarray:
    """Rotation vector taking current's orientation to target's, in the parent frame."""
    q_rel = compose(target, current.inverse()).quat
    w = q_rel[0]
    v = q_rel[1:]
    if w < 0:
        w, v = -w, -v
    s = np.linalg.norm(v)
    if s < 1e-15:
        return 2.0 * v  # small-angle limit: sin(a/2) ~ a/2
    angle = 2.0 * math.atan2(s, w)
    return angle * v / s
