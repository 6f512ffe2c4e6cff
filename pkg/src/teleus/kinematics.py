"""Forward/inverse kinematics for a configurable 7-DoF revolute serial arm.

IK is damped least squares restarted from multiple seeds; the caller picks a
solution with `select_solution` (minimum joint-space distance to the current
configuration) to avoid elbow-configuration jumps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .se3 import Pose

# Damped-least-squares iteration parameters.
IK_DAMPING = 1e-3
IK_STEP_CLAMP = 0.2        # rad per iteration, per joint
IK_MAX_ITERS = 400
IK_CONVERGENCE = 1e-8      # pose error (m + rad)
IK_ACCEPT = 1e-6


class EmptySolutionSet(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray          # unit rotation axis in the joint frame
    origin: Pose              # fixed link transform preceding the joint
    q_min: float
    q_max: float
    v_max: float
    a_max: float
    j_max: float


@dataclass(frozen=True)
class RobotModel:
    joints: tuple[Joint, ...]
    flange: Pose              # fixed transform after the last joint

    def __post_init__(self):
        for j in self.joints:
            if not (j.q_min < j.q_max):
                raise ValueError("joint limits must satisfy q_min < q_max")
            if min(j.v_max, j.a_max, j.j_max) <= 0:
                raise ValueError("motion limits must be strictly positive")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    def within_limits(self, q, tol: float = 1e-9) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.q_min, self.q_max)

    @staticmethod
    def from_json(obj) -> "RobotModel":
        joints = tuple(
            Joint(
                axis=np.asarray(j["axis"], dtype=float),
                origin=Pose.from_json(j["origin"]),
                q_min=float(j["q_min"]), q_max=float(j["q_max"]),
                v_max=float(j["v_max"]), a_max=float(j["a_max"]),
                j_max=float(j["j_max"]),
            )
            for j in obj["joints"]
        )
        return RobotModel(joints=joints, flange=Pose.from_json(obj["flange"]))

    @staticmethod
    def load(path) -> "RobotModel":
        with open(path) as f:
            return RobotModel.from_json(json.load(f))

    @staticmethod
    def default() -> "RobotModel":
        """7-DoF model shipped as configuration data (published Panda geometry)."""
        text = resources.files("teleus.data").joinpath("panda.json").read_text()
        return RobotModel.from_json(json.loads(text))


def _cached_matrices(model: RobotModel):
    cache = model.__dict__.get("_mat_cache")
    if cache is None:
        cache = ([j.origin.matrix() for j in model.joints],
                 model.flange.matrix(),
                 [np.asarray(j.axis, dtype=float) for j in model.joints])
        object.__setattr__(model, "_mat_cache", cache)
    return cache


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = axis
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ])


def _frames(model: RobotModel, q):
    """4x4 pose of each joint frame (after its rotation) plus the flange."""
    origins, flange, axes = _cached_matrices(model)
    q = np.asarray(q, dtype=float)
    frames = []
    t = np.eye(4)
    for i in range(model.dof):
        t = t @ origins[i]
        rot = np.eye(4)
        rot[:3, :3] = _axis_rotation(axes[i], q[i])
        t = t @ rot
        frames.append(t)
    frames.append(t @ flange)
    return frames


def forward_kinematics(model: RobotModel, q) -> Pose:
    """Flange pose in the base frame."""
    return Pose.from_matrix(_frames(model, q)[-1])


def _jacobian_from_frames(model: RobotModel, frames) -> np.ndarray:
    _, _, axes = _cached_matrices(model)
    p_end = frames[-1][:3, 3]
    jac = np.zeros((6, model.dof))
    for i in range(model.dof):
        z = frames[i][:3, :3] @ axes[i]
        p = frames[i][:3, 3]
        jac[:3, i] = np.cross(z, p_end - p)
        jac[3:, i] = z
    return jac


def jacobian(model: RobotModel, q) -> np.ndarray:
    """Geometric Jacobian (6x7): rows 0-2 linear (m), rows 3-5 angular (rad)."""
    return _jacobian_from_frames(model, _frames(model, q))


def point_jacobian(model: RobotModel, q, link_index: int, point_local,
                   frames=None) -> np.ndarray:
    """Position Jacobian (3x7) of a point rigidly attached to joint frame
    link_index (index model.dof addresses the flange frame)."""
    _, _, axes = _cached_matrices(model)
    if frames is None:
        frames = _frames(model, q)
    f = frames[link_index]
    p_point = f[:3, :3] @ np.asarray(point_local, dtype=float) + f[:3, 3]
    jac = np.zeros((3, model.dof))
    for i in range(min(link_index + 1, model.dof)):
        z = frames[i][:3, :3] @ axes[i]
        p = frames[i][:3, 3]
        jac[:, i] = np.cross(z, p_point - p)
    return jac


def _pose_error(target_mat: np.ndarray, current_mat: np.ndarray) -> np.ndarray:
    """6-vector [position; rotation-vector] error in the base frame."""
    e = np.empty(6)
    e[:3] = target_mat[:3, 3] - current_mat[:3, 3]
    e[3:] = _rotvec(target_mat[:3, :3] @ current_mat[:3, :3].T)
    return e


def _rotvec(r: np.ndarray) -> np.ndarray:
    # Shepperd quaternion extraction, inlined for the IK hot path.
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax([r[0, 0], r[1, 1], r[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q = q / np.linalg.norm(q)
    w, v = q[0], q[1:]
    if w < 0:
        w, v = -w, -v
    s = np.linalg.norm(v)
    if s < 1e-15:
        return 2.0 * v
    return 2.0 * np.arctan2(s, w) * v / s


def _ik_from_seed(model: RobotModel, target: Pose, seed) -> np.ndarray | None:
    q = np.asarray(seed, dtype=float).copy()
    target_mat = target.matrix()
    lam = IK_DAMPING
    hop_rng = np.random.default_rng(0x5EED)
    eye6 = np.eye(6)
    frames = _frames(model, q)
    err = _pose_error(target_mat, frames[-1])
    err_norm = np.linalg.norm(err[:3]) + np.linalg.norm(err[3:])
    q_best, err_best = q.copy(), err_norm
    iters_in_basin = 0
    for _ in range(IK_MAX_ITERS):
        if err_norm < IK_CONVERGENCE:
            break
        iters_in_basin += 1
        jac = _jacobian_from_frames(model, frames)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam * lam * eye6, err)
        dq = np.clip(dq, -IK_STEP_CLAMP, IK_STEP_CLAMP)
        q_new = model.clamp(q + dq)
        blocked = q_new != q + dq
        if np.any(blocked):
            # Slide along the active joint-limit face: re-solve with the
            # blocked joints frozen.
            jac_free = jac.copy()
            jac_free[:, blocked] = 0.0
            dq = jac_free.T @ np.linalg.solve(
                jac_free @ jac_free.T + lam * lam * eye6, err)
            dq = np.clip(dq, -IK_STEP_CLAMP, IK_STEP_CLAMP)
            q_new = model.clamp(q + dq)
        frames_new = _frames(model, q_new)
        err_new = _pose_error(target_mat, frames_new[-1])
        err_new_norm = np.linalg.norm(err_new[:3]) + np.linalg.norm(err_new[3:])
        if err_new_norm < err_norm:
            q, frames, err, err_norm = q_new, frames_new, err_new, err_new_norm
            lam = max(lam / 3.0, IK_DAMPING)
            if err_norm < err_best:
                q_best, err_best = q.copy(), err_norm
        else:
            # Step made things worse: damp harder and retry from the same q.
            lam *= 10.0
        if lam > 1e3 or iters_in_basin > 80:
            # Stuck or grinding in one basin: hop and keep going within the
            # iteration budget. Alternate small nudges with full in-limit
            # re-draws to escape folded-elbow basins.
            if hop_rng.uniform() < 0.5:
                q = model.clamp(q + hop_rng.uniform(-0.7, 0.7, size=model.dof))
            else:
                q = hop_rng.uniform(model.q_min, model.q_max)
            frames = _frames(model, q)
            err = _pose_error(target_mat, frames[-1])
            err_norm = np.linalg.norm(err[:3]) + np.linalg.norm(err[3:])
            lam = IK_DAMPING
            iters_in_basin = 0
    q = q_best if err_best < err_norm else q
    final = _frames(model, q)[-1]
    err = _pose_error(target_mat, final)
    if (np.linalg.norm(err[:3]) < IK_ACCEPT
            and np.linalg.norm(err[3:]) < IK_ACCEPT
            and model.within_limits(q)):
        return q
    return None


def inverse_kinematics(model: RobotModel, target: Pose, seeds) -> list[np.ndarray]:
    """All distinct converged solutions; empty list if the target is unreachable."""
    if not target.is_finite():
        raise ValueError("target pose must be finite")
    solutions: list[np.ndarray] = []
    for seed in seeds:
        sol = _ik_from_seed(model, target, seed)
        if sol is None:
            continue
        if not any(np.linalg.norm(sol - s) < 1e-6 for s in solutions):
            solutions.append(sol)
    return solutions


def default_seeds(model: RobotModel, q_current, rng: np.random.Generator,
                  extra: int = 7) -> list[np.ndarray]:
    """Current configuration plus uniform random in-limit restarts."""
    seeds = [np.asarray(q_current, dtype=float)]
    seeds.extend(rng.uniform(model.q_min, model.q_max) for _ in range(extra))
    return seeds


def select_solution(solutions, q_m) -> np.ndarray:
    """Solution closest to q_m in squared Euclidean distance; ties keep the
    lowest list index."""
    if len(solutions) == 0:
        raise EmptySolutionSet("no IK solutions to select from")
    q_m = np.asarray(q_m, dtype=float)
    dists = [float(np.sum((np.asarray(s) - q_m) ** 2)) for s in solutions]
    return np.asarray(solutions[int(np.argmin(dists))], dtype=float)
