"""Jerk-limited online interpolation toward the latest goal configuration.

Each joint runs an independent scalar third-order (jerk-limited) profile that
is replanned whenever the goal changes, starting from the current kinematic
state so position, velocity, and acceleration stay continuous. Rest-to-rest
moves reproduce the time-optimal seven-segment profile exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12
_BISECT_ITERS = 52


class GoalOutOfLimits(ValueError):
    pass


@dataclass(frozen=True)
class MotionLimits:
    """Per-joint velocity / acceleration / jerk bounds (broadcast from scalars)."""

    v_max: np.ndarray
    a_max: np.ndarray
    j_max: np.ndarray

    @staticmethod
    def make(v_max=2.0, a_max=10.0, j_max=1000.0, dof: int = 7) -> "MotionLimits":
        return MotionLimits(
            v_max=np.broadcast_to(np.asarray(v_max, dtype=float), (dof,)).copy(),
            a_max=np.broadcast_to(np.asarray(a_max, dtype=float), (dof,)).copy(),
            j_max=np.broadcast_to(np.asarray(j_max, dtype=float), (dof,)).copy(),
        )

    def __post_init__(self):
        if np.any(self.v_max <= 0) or np.any(self.a_max <= 0) or np.any(self.j_max <= 0):
            raise ValueError("motion limits must be strictly positive")


# --- scalar profile machinery -------------------------------------------------

def _integrate(segments, x0, v0, a0):
    """Final (x, v, a) after running the (duration, jerk) segments."""
    x, v, a = x0, v0, a0
    for t, j in segments:
        x += v * t + 0.5 * a * t * t + j * t ** 3 / 6.0
        v += a * t + 0.5 * j * t * t
        a += j * t
    return x, v, a


def _vel_change(v0, a0, v1, am, jm):
    """Segments taking (v=v0, a=a0) to (v=v1, a=0) with |a|<=am, |j|<=jm."""

    def gained(a_pk):
        # velocity gained with zero hold time: ramp a0->a_pk, then a_pk->0
        dv1 = (a0 + a_pk) / 2.0 * abs(a_pk - a0) / jm
        return dv1 + a_pk * abs(a_pk) / (2.0 * jm)

    dv = v1 - v0
    if dv > gained(am):
        a_pk, t2 = am, (dv - gained(am)) / am
    elif dv < gained(-am):
        a_pk, t2 = -am, (dv - gained(-am)) / (-am)
    else:
        # Closed-form inverse of gained(): for a_pk beyond a0 in the motion
        # direction the gain is +-(2*a_pk^2 - a0^2)/(2*jm); between 0 and a0
        # it is the constant sign(a0)*a0^2/(2*jm) (one continuous ramp), so
        # any peak in that band, e.g. 0, reproduces the same trajectory.
        g_flat = (a0 * a0 / (2.0 * jm)) * (1.0 if a0 > 0 else -1.0)
        if dv > g_flat:
            a_pk = ((2.0 * jm * dv + a0 * a0) / 2.0) ** 0.5
        elif dv < g_flat:
            a_pk = -((a0 * a0 - 2.0 * jm * dv) / 2.0) ** 0.5
        else:
            a_pk = 0.0
        t2 = 0.0

    segments = []
    t1 = abs(a_pk - a0) / jm
    if t1 > _EPS:
        segments.append((t1, jm if a_pk > a0 else -jm))
    if t2 > _EPS:
        segments.append((t2, 0.0))
    t3 = abs(a_pk) / jm
    if t3 > _EPS:
        segments.append((t3, -jm if a_pk > 0 else jm))
    return segments


def _plan(x0, v0, a0, xg, vm, am, jm):
    """Segment plan from (x0, v0, a0) to (xg, 0, 0) within the limits."""
    brake = _vel_change(v0, a0, 0.0, am, jm)
    x_stop, _, _ = _integrate(brake, x0, v0, a0)
    d = xg - x_stop
    if abs(d) < 1e-12:
        return brake

    if d < 0:
        # Mirror so the residual move is in +direction.
        mirrored = _plan(-x0, -v0, -a0, -xg, vm, am, jm)
        return [(t, -j) for t, j in mirrored]

    if v0 < 0:
        # Moving away from the goal: brake to rest, then a rest-to-rest move.
        return brake + _plan(x_stop, 0.0, 0.0, xg, vm, am, jm)

    def move(vc):
        return _vel_change(v0, a0, vc, am, jm) + _vel_change(vc, 0.0, 0.0, am, jm)

    def dist(vc):
        x, _, _ = _integrate(move(vc), x0, v0, a0)
        return x - x0

    target = xg - x0
    if dist(vm) <= target:
        accel = _vel_change(v0, a0, vm, am, jm)
        decel = _vel_change(vm, 0.0, 0.0, am, jm)
        cruise = (target - dist(vm)) / vm
        mid = [(cruise, 0.0)] if cruise > _EPS else []
        return accel + mid + decel

    lo, hi = 0.0, vm
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if dist(mid) < target:
            lo = mid
        else:
            hi = mid
    return move(0.5 * (lo + hi))


class _ScalarProfile:
    """Sampled jerk-limited profile; lands exactly on the goal when exhausted."""

    def __init__(self, x0, v0, a0, goal, vm, am, jm):
        self.goal = goal
        self.segments = _plan(x0, v0, a0, goal, vm, am, jm)
        self.x, self.v, self.a = x0, v0, a0
        self._seg = 0
        self._t_in_seg = 0.0

    @property
    def done(self):
        return self._seg >= len(self.segments)

    def duration(self):
        return sum(t for t, _ in self.segments)

    def step(self, dt):
        remaining = dt
        while remaining > 0.0 and self._seg < len(self.segments):
            seg_t, j = self.segments[self._seg]
            take = min(remaining, seg_t - self._t_in_seg)
            x, v, a = self.x, self.v, self.a
            self.x = x + v * take + 0.5 * a * take * take + j * take ** 3 / 6.0
            self.v = v + a * take + 0.5 * j * take * take
            self.a = a + j * take
            self._t_in_seg += take
            remaining -= take
            if self._t_in_seg >= seg_t - _EPS:
                self._seg += 1
                self._t_in_seg = 0.0
        if self._seg >= len(self.segments):
            # Snap out residual bisection error so convergence is exact.
            self.x, self.v, self.a = self.goal, 0.0, 0.0
        return self.x, self.v


class TrajectoryInterpolator:
    """Online per-joint interpolator toward the most recent goal."""

    def __init__(self, q0, limits: MotionLimits, q_min=None, q_max=None):
        q0 = np.asarray(q0, dtype=float)
        self.limits = limits
        self.q_min = None if q_min is None else np.asarray(q_min, dtype=float)
        self.q_max = None if q_max is None else np.asarray(q_max, dtype=float)
        self.q_last = q0.copy()
        self.qdot = np.zeros_like(q0)
        self.qddot = np.zeros_like(q0)
        self.goal = q0.copy()
        self._profiles = [
            _ScalarProfile(q0[i], 0.0, 0.0, q0[i],
                           limits.v_max[i], limits.a_max[i], limits.j_max[i])
            for i in range(len(q0))
        ]

    def set_goal(self, q_g):
        q_g = np.asarray(q_g, dtype=float)
        if self.q_min is not None and (
                np.any(q_g < self.q_min) or np.any(q_g > self.q_max)):
            raise GoalOutOfLimits(f"goal outside position limits: {q_g}")
        self.goal = q_g.copy()
        for i, p in enumerate(self._profiles):
            self._profiles[i] = _ScalarProfile(
                p.x, p.v, p.a, q_g[i],
                self.limits.v_max[i], self.limits.a_max[i], self.limits.j_max[i])

    def step(self, dt):
        """Advance by dt seconds; returns (q_n, qdot_n)."""
        if not 0.0 < dt <= 0.01:
            raise ValueError("dt must be in (0, 10 ms]")
        for i, p in enumerate(self._profiles):
            self.q_last[i], self.qdot[i] = p.step(dt)
            self.qddot[i] = p.a
        return self.q_last.copy(), self.qdot.copy()


def drift_compensated_command(q_n, qdot_n, q_m, k_e, dt, q_last, vel_bound):
    """Velocity command with joint-error correction, saturated per joint.

    qdot_d = clamp(qdot_n + k_e*(q_n - q_m), ±vel_bound); q_d = q_last + dt*qdot_d.
    """
    q_n = np.asarray(q_n, dtype=float)
    qdot_d = np.clip(np.asarray(qdot_n, dtype=float)
                     + np.asarray(k_e, dtype=float) * (q_n - np.asarray(q_m, dtype=float)),
                     -np.asarray(vel_bound, dtype=float),
                     np.asarray(vel_bound, dtype=float))
    q_d = np.asarray(q_last, dtype=float) + dt * qdot_d
    return q_d, qdot_d
