"""Fixed-rate joint impedance control against a simulated follower plant.

The control loop runs the drift-compensated command pipeline: dequeue the
newest goal configuration, advance the jerk-limited interpolator, add the
joint-error velocity correction, evaluate the spring-damper torque law with
gravity/friction feedforward, and integrate the surrogate plant one step.
"""
from __future__ import annotations

import collections
from dataclasses import dataclass, field

import numpy as np

from .kinematics import RobotModel, forward_kinematics, point_jacobian
from .kinematics import _frames as _fk_frames
from .phantom import SyntheticPhantom
from .se3 import Pose, compose
from .trajectory import (MotionLimits, TrajectoryInterpolator,
                         drift_compensated_command)

GRAVITY = np.array([0.0, 0.0, -9.81])

DEFAULT_INERTIA = np.array([2.5, 2.5, 2.0, 2.0, 1.5, 1.0, 0.5])  # kg m^2
DEFAULT_FRICTION = 0.1        # N m s / rad, viscous
DEFAULT_TORQUE_LIMIT = 80.0   # N m
CONTACT_STIFFNESS = 5000.0    # N/m
CONTACT_DAMPING = 50.0        # N s/m


class CommandQueue:
    """Bounded FIFO between the command and control contexts.

    Single producer, single consumer, non-blocking on both sides; pushing
    onto a full queue evicts the oldest entry. Backed by a deque with maxlen,
    whose append/popleft are atomic under the interpreter lock.
    """

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: collections.deque = collections.deque(maxlen=capacity)
        self.dropped = 0

    def push(self, item) -> None:
        if len(self._items) >= self.capacity:
            self.dropped += 1
        self._items.append(item)

    def pop(self):
        """Oldest item, or None when empty."""
        try:
            return self._items.popleft()
        except IndexError:
            return None

    def __len__(self):
        return len(self._items)


@dataclass(frozen=True)
class ControllerGains:
    k_p: np.ndarray   # N m / rad
    k_d: np.ndarray   # N m s / rad
    k_e: float = 5.0  # 1/s drift gain

    @staticmethod
    def default(inertia=DEFAULT_INERTIA, k_p: float = 600.0,
                k_e: float = 5.0) -> "ControllerGains":
        kp = np.full(len(inertia), float(k_p))
        return ControllerGains(k_p=kp,
                               k_d=2.0 * np.sqrt(kp * np.asarray(inertia)),
                               k_e=k_e)


@dataclass(frozen=True)
class PointMass:
    link_index: int
    offset: np.ndarray  # in the link frame, m
    mass: float         # kg


@dataclass(frozen=True)
class PlantParams:
    """Surrogate follower dynamics: diagonal joint-space inertia, viscous
    friction, and a few point masses for configuration-dependent gravity."""

    inertia: np.ndarray = field(default_factory=lambda: DEFAULT_INERTIA.copy())
    friction: float = DEFAULT_FRICTION
    point_masses: tuple[PointMass, ...] = (
        PointMass(1, np.array([0.0, 0.0, 0.15]), 3.0),
        PointMass(3, np.array([0.0, 0.0, 0.15]), 2.5),
        PointMass(5, np.array([0.0, 0.0, 0.05]), 1.5),
    )
    torque_limit: float = DEFAULT_TORQUE_LIMIT


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qdot: np.ndarray
    tau_ext: np.ndarray
    t: float = 0.0


def gravity_torque(model: RobotModel, q, params: PlantParams,
                   frames=None) -> np.ndarray:
    """Joint torque needed to hold the point masses against gravity."""
    if frames is None and params.point_masses:
        frames = _fk_frames(model, q)
    tau = np.zeros(model.dof)
    for pm in params.point_masses:
        jac = point_jacobian(model, q, pm.link_index, pm.offset, frames=frames)
        tau -= jac.T @ (pm.mass * GRAVITY)
    return tau


def impedance_torque(q_d, qdot_d, q_m, qdot_m, gains: ControllerGains,
                     tau_g, tau_cf,
                     torque_limit: float = DEFAULT_TORQUE_LIMIT) -> np.ndarray:
    """Spring-damper torque with feedforward, clamped to the actuator limit."""
    tau = (gains.k_p * (np.asarray(q_d) - np.asarray(q_m))
           + gains.k_d * (np.asarray(qdot_d) - np.asarray(qdot_m))
           + np.asarray(tau_g) + np.asarray(tau_cf))
    return np.clip(tau, -torque_limit, torque_limit)


def plant_step(state: PlantState, tau_c, tau_ext, dt: float,
               model: RobotModel, params: PlantParams,
               tau_g_precomputed=None) -> PlantState:
    """Semi-implicit Euler step of the surrogate dynamics with joint limits."""
    if not 0.0 < dt <= 0.002:
        raise ValueError("dt must be in (0, 2 ms]")
    tau_g = gravity_torque(model, state.q, params) if tau_g_precomputed is None \
        else tau_g_precomputed
    tau_f = params.friction * state.qdot
    qddot = (np.asarray(tau_c) + np.asarray(tau_ext) - tau_g - tau_f) / params.inertia
    qdot = state.qdot + qddot * dt
    q = state.q + qdot * dt
    # Hard joint limits: clamp and kill velocity into the limit.
    low, high = q < model.q_min, q > model.q_max
    q = np.clip(q, model.q_min, model.q_max)
    qdot = np.where(low & (qdot < 0), 0.0, qdot)
    qdot = np.where(high & (qdot > 0), 0.0, qdot)
    return PlantState(q=q, qdot=qdot, tau_ext=np.asarray(tau_ext, dtype=float),
                      t=state.t + dt)


def contact_wrench(flange_pose: Pose, probe: Pose, phantom: SyntheticPhantom,
                   k_c: float = CONTACT_STIFFNESS,
                   d_c: float = CONTACT_DAMPING,
                   tip_velocity=None) -> np.ndarray:
    """6-vector [force; moment] at the probe tip from phantom penetration.

    Zero outside the surface; inside, a spring-damper along the outward
    surface normal, never pulling (no sticking).
    """
    tip = compose(flange_pose, probe).trans
    sd = float(phantom.signed_distance(tip)[0])
    wrench = np.zeros(6)
    if sd >= 0:
        return wrench
    normal = phantom.surface_normal(tip)
    depth = -sd
    rate = 0.0
    if tip_velocity is not None:
        rate = -float(np.dot(np.asarray(tip_velocity, dtype=float), normal))
    magnitude = max(k_c * depth + d_c * rate, 0.0)
    wrench[:3] = magnitude * normal
    return wrench


class FollowerController:
    """Composed 1 kHz control loop: queue -> interpolator -> drift
    compensation -> impedance law -> plant, with probe/phantom contact."""

    def __init__(self, model: RobotModel, q0,
                 gains: ControllerGains | None = None,
                 params: PlantParams | None = None,
                 limits: MotionLimits | None = None,
                 phantom: SyntheticPhantom | None = None,
                 probe: Pose | None = None,
                 dt: float = 0.001,
                 contact_stiffness: float = CONTACT_STIFFNESS,
                 contact_damping: float = CONTACT_DAMPING):
        q0 = np.asarray(q0, dtype=float)
        self.model = model
        self.params = params or PlantParams()
        self.gains = gains or ControllerGains.default(self.params.inertia)
        self.limits = limits or MotionLimits.make(dof=model.dof)
        self.phantom = phantom
        self.probe = probe or Pose.identity()
        self.dt = dt
        self.contact_stiffness = contact_stiffness
        self.contact_damping = contact_damping

        self.queue = CommandQueue()
        self.state_out = CommandQueue(capacity=64)
        self.interpolator = TrajectoryInterpolator(
            q0, self.limits, q_min=model.q_min, q_max=model.q_max)
        self.plant = PlantState(q=q0.copy(), qdot=np.zeros(model.dof),
                                tau_ext=np.zeros(model.dof))
        self._q_last = q0.copy()
        self.last_contact_force = 0.0
        self.last_tau_c = np.zeros(model.dof)
        # Extra joint-space external torque (disturbances, test pushes).
        self.disturbance = np.zeros(model.dof)

    def flange_pose(self) -> Pose:
        return forward_kinematics(self.model, self.plant.q)

    def tick(self) -> PlantState:
        """One deterministic control period."""
        goal = self.queue.pop()
        if goal is not None:
            self.interpolator.set_goal(goal)
        q_n, qdot_n = self.interpolator.step(self.dt)

        q_d, qdot_d = drift_compensated_command(
            q_n, qdot_n, self.plant.q, self.gains.k_e, self.dt,
            self._q_last, self.limits.v_max)
        self._q_last = q_n.copy()

        frames = _fk_frames(self.model, self.plant.q)
        tau_g = gravity_torque(self.model, self.plant.q, self.params,
                               frames=frames)
        tau_cf = self.params.friction * self.plant.qdot
        tau_c = impedance_torque(q_d, qdot_d, self.plant.q, self.plant.qdot,
                                 self.gains, tau_g, tau_cf,
                                 self.params.torque_limit)
        self.last_tau_c = tau_c

        tau_ext = self.disturbance.copy()
        if self.phantom is not None:
            flange = Pose.from_matrix(frames[-1])
            jac = point_jacobian(self.model, self.plant.q, self.model.dof,
                                 self.probe.trans, frames=frames)
            wrench = contact_wrench(flange, self.probe, self.phantom,
                                    self.contact_stiffness,
                                    self.contact_damping,
                                    jac @ self.plant.qdot)
            tau_ext = tau_ext + jac.T @ wrench[:3]
            self.last_contact_force = float(np.linalg.norm(wrench[:3]))

        self.plant = plant_step(self.plant, tau_c, tau_ext, self.dt,
                                self.model, self.params,
                                tau_g_precomputed=tau_g)
        return self.plant
