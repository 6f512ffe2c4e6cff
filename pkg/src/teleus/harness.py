"""Scenario runner: wires operator, delayed transport, follower simulation,
and image synthesis into one deterministic round-robin loop.

A scenario holds a timed operator script (hand poses, button and subtask
events), a delay configuration, and a seed. The runner executes every
context on a shared simulated clock: the operator feeds the session FSM and
sends pose commands through the delay link; the follower solves IK, runs
the impedance-controlled plant, and streams live ultrasound frames back;
in VH-MMT mode the operator also re-slices the pre-acquired sweep volume at
the commanded plane for an instant preview.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calib import CalibrationSet
from .control import FollowerController
from .kinematics import (RobotModel, forward_kinematics, inverse_kinematics,
                         select_solution)
from .metrics import (EllipseFit, SubtaskSpan, TaskTimeline,
                      default_threshold, eccentricity, eccentricity_stats,
                      lateral_rmse, segment_vessel)
from .netsim import (DelayConfig, Link, MessageKind, SimClock,
                     TimestampedMessage, pose_cmd)
from .phantom import SyntheticPhantom
from .se3 import Pose, compose, rotvec_between
from .session import Event, Mode, SessionState, handle_event
from .usmodel import (ImagePlane, default_trajectory, generate_sweep,
                      live_image, reslice)

CONTROL_DT = 0.001            # s, follower control period
OPERATOR_TICK_US = 10_000     # 100 Hz operator/network context
FRAME_PERIOD_US = 33_000      # ~30 Hz image and state streams
SCRIPT_RATE_HZ = 20           # hand-pose sample rate in generated scripts
STATE_LOG_PERIOD_US = 10_000  # 100 Hz plant-state logging

PIXEL_PITCH = 0.0005          # m/px of the live/preview image
LIVE_COLS, LIVE_ROWS = 160, 128
PRESS_DEPTH = 0.002           # m the scripted probe presses into the surface
SWEEP_SPACING = 0.001         # m/voxel of the pre-acquired model volume

Q_HOME = np.array([0.0, -0.3, 0.0, -2.0, 0.0, 1.8, 0.8])

MODES = ("mmt", "vhmmt")

_STATE_FMT = struct.Struct("<7dd7d")      # flange pose, contact force, q
_FRAME_FMT = struct.Struct("<7ddHH")      # plane pose, force, cols, rows


class ConfigError(ValueError):
    pass


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ScriptEvent:
    """One timed operator action: a hand pose sample, a button or session
    event, or a subtask boundary marker."""

    t_us: int
    kind: str                     # pose | start | stop | button_down |
    hand: Pose | None = None      # button_up | subtask
    subtask_id: int | None = None

    def to_json(self) -> dict:
        out = {"t_us": self.t_us, "kind": self.kind}
        if self.hand is not None:
            out["hand"] = self.hand.to_json()
        if self.subtask_id is not None:
            out["subtask_id"] = self.subtask_id
        return out

    @staticmethod
    def from_json(obj: dict) -> "ScriptEvent":
        return ScriptEvent(
            t_us=int(obj["t_us"]), kind=str(obj["kind"]),
            hand=Pose.from_json(obj["hand"]) if "hand" in obj else None,
            subtask_id=obj.get("subtask_id"))


@dataclass(frozen=True)
class Scenario:
    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    mode: str = "vhmmt"
    seed: int = 0
    duration_limit_s: float = 120.0
    script: tuple[ScriptEvent, ...] = ()
    force_profile: tuple[tuple[float, float], ...] = ((0.0, 10.0),)
    lateral_noise_px: float = 0.0   # provenance of the generated script

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.delay_ms < 0 or self.duration_limit_s <= 0:
            raise ConfigError("delay must be >= 0 and duration positive")
        object.__setattr__(self, "script", tuple(self.script))
        object.__setattr__(self, "force_profile", tuple(
            (float(t), float(f)) for t, f in self.force_profile))

    def force_at(self, t_s: float) -> float:
        ts = [p[0] for p in self.force_profile]
        fs = [p[1] for p in self.force_profile]
        return float(np.interp(t_s, ts, fs))

    def to_json(self) -> dict:
        return {
            "delay_ms": self.delay_ms, "jitter_ms": self.jitter_ms,
            "mode": self.mode, "seed": self.seed,
            "duration_limit_s": self.duration_limit_s,
            "lateral_noise_px": self.lateral_noise_px,
            "force_profile": [list(p) for p in self.force_profile],
            "script": [e.to_json() for e in self.script],
        }

    @staticmethod
    def from_json(obj: dict) -> "Scenario":
        return Scenario(
            delay_ms=float(obj.get("delay_ms", 0.0)),
            jitter_ms=float(obj.get("jitter_ms", 0.0)),
            mode=str(obj.get("mode", "vhmmt")),
            seed=int(obj.get("seed", 0)),
            duration_limit_s=float(obj.get("duration_limit_s", 120.0)),
            lateral_noise_px=float(obj.get("lateral_noise_px", 0.0)),
            force_profile=tuple(
                (float(t), float(f))
                for t, f in obj.get("force_profile", [(0.0, 10.0)])),
            script=tuple(ScriptEvent.from_json(e)
                         for e in obj.get("script", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2,
                                         sort_keys=True))

    @staticmethod
    def load(path) -> "Scenario":
        return Scenario.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FrameRecord:
    source: str          # "preview" | "live"
    t_cmd_us: int        # hand-pose/command time the frame reflects
    t_gen_us: int        # synthesis time
    t_arrival_us: int    # operator-side receive time
    plane_pose: Pose
    force_n: float
    pixels: np.ndarray   # (rows, cols) uint8


@dataclass
class RunLog:
    scenario: Scenario
    states: list = field(default_factory=list)    # dicts, 100 Hz
    commands: list = field(default_factory=list)  # (t_us, Pose)
    preview_frames: list = field(default_factory=list)
    live_frames: list = field(default_factory=list)
    events: list = field(default_factory=list)    # (t_us, str, detail)
    ik_failures: int = 0
    completed: bool = False
    truncated: bool = False

    def timeline(self) -> TaskTimeline:
        marks = [(t, d) for t, kind, d in self.events
                 if kind == "subtask_start"]
        end_us = self.events[-1][0] if self.events else 0
        spans = []
        for i, (t, sid) in enumerate(marks):
            t_end = marks[i + 1][0] if i + 1 < len(marks) else end_us
            spans.append(SubtaskSpan(int(sid), t / 1e6, t_end / 1e6))
        return TaskTimeline(spans)


# ---------------------------------------------------------------------------
# Scripted operator

def _plane_rotation(u, v) -> np.ndarray:
    """Right-handed rotation with in-image x = u, in-image y = v."""
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    v = np.asarray(v, dtype=float)
    v = v - (v @ u) * u
    v = v / np.linalg.norm(v)
    m = np.eye(4)
    m[:3, :3] = np.column_stack([u, v, np.cross(u, v)])
    return m


def _pose_from_rot(rot4: np.ndarray, trans) -> Pose:
    return Pose(quat=Pose.from_matrix(rot4).quat,
                trans=np.asarray(trans, dtype=float))


def _interp_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Geodesic pose interpolation: lerp translation, partial relative
    rotation applied in the parent frame."""
    r = rotvec_between(a, b)
    angle = float(np.linalg.norm(r))
    if angle < 1e-15:
        rel = Pose.identity()
    else:
        rel = Pose.from_axis_angle(r / angle, s * angle)
    return Pose(quat=compose(rel, a).quat,
                trans=(1.0 - s) * a.trans + s * b.trans)


def _smoothstep(s: float) -> float:
    return s * s * (3.0 - 2.0 * s)


def transverse_plane_pose(phantom: SyntheticPhantom, x: float,
                          press_depth: float = PRESS_DEPTH) -> Pose:
    """Probe-tip pose for a vessel cross-section at station x: tip on the
    top surface (pressed in), in-image x = world -y, push axis = world -z,
    plane normal = +x. The image itself hangs below the tip."""
    cy = phantom.vessels[0].centerline[0][1]
    return _pose_from_rot(_plane_rotation([0, -1, 0], [0, 0, -1]),
                          [x, cy, phantom.top_z - press_depth])


def longitudinal_plane_pose(phantom: SyntheticPhantom, axis, x: float,
                            y: float,
                            press_depth: float = PRESS_DEPTH) -> Pose:
    """Probe-tip pose for an in-plane vessel view: in-image x along the
    vessel axis, push axis as close to world -z as orthogonality allows,
    tip on the top surface above (x, y)."""
    return _pose_from_rot(_plane_rotation(axis, [0, 0, -1.0]),
                          [x, y, phantom.top_z - press_depth])


@dataclass(frozen=True)
class _Leg:
    target: Pose
    move_s: float
    hold_s: float
    subtask_id: int | None = None
    metric_window: bool = False   # vessel-following stretch for metrics


def five_step_task(phantom: SyntheticPhantom, model: RobotModel,
                   delay_ms: float = 0.0, seed: int = 0,
                   lateral_noise_px: float = 0.0,
                   force_n: float = 10.0,
                   steps: tuple[int, ...] = (1, 2, 3, 4, 5)) -> Scenario:
    """Scripted five-step scanning task over the branched vessel phantom.

    1. longitudinal view of the large vessel's left side
    2. transverse sweep along the large vessel
    3. centered view of the bifurcation
    4. sweep along the thin branch
    5. longitudinal view of the thin branch

    Lateral noise (px of the live image, 1 px = PIXEL_PITCH) perturbs the
    commanded in-image x axis with a slowly varying Gaussian process so the
    follower can track it; force_n drives the synthesized tissue
    compression. The alignment hold is sized to survive the feedback delay.
    """
    large, branch = phantom.vessels
    cy = large.centerline[0][1]
    x_left, x_right = large.centerline[0][0], large.centerline[-1][0]
    bif = phantom.bifurcation
    home = forward_kinematics(model, Q_HOME)

    legs: list[_Leg] = []
    if 1 in steps:
        legs.append(_Leg(longitudinal_plane_pose(
            phantom, [1, 0, 0], (x_left + bif[0]) / 2, cy),
            move_s=3.0, hold_s=1.0, subtask_id=1))
    if 2 in steps:
        legs.append(_Leg(transverse_plane_pose(phantom, x_left + 0.004),
                         move_s=2.5, hold_s=0.7, subtask_id=2))
        legs.append(_Leg(transverse_plane_pose(phantom, x_right - 0.004),
                         move_s=4.0, hold_s=0.3, metric_window=True))
    if 3 in steps:
        legs.append(_Leg(transverse_plane_pose(phantom, bif[0]),
                         move_s=1.5, hold_s=1.0, subtask_id=3))
    if 4 in steps:
        p0, p1 = branch.centerline[0], branch.centerline[-1]
        axis = (p1 - p0) / np.linalg.norm(p1 - p0)
        down = np.array([0.0, 0.0, -1.0])
        down = down - (down @ axis) * axis
        rot = _plane_rotation(np.cross(down, axis), down)
        z_tip = phantom.top_z - PRESS_DEPTH
        a, b = p0 + 0.006 * axis, p1 - 0.004 * axis
        start = _pose_from_rot(rot, [a[0], a[1], z_tip])
        end = dataclasses.replace(start,
                                  trans=np.array([b[0], b[1], z_tip]))
        legs.append(_Leg(start, move_s=1.5, hold_s=0.3, subtask_id=4))
        legs.append(_Leg(end, move_s=3.0, hold_s=0.3))
    if 5 in steps:
        p0, p1 = branch.centerline[0], branch.centerline[-1]
        axis = (p1 - p0) / np.linalg.norm(p1 - p0)
        mid = (p0 + p1) / 2
        legs.append(_Leg(longitudinal_plane_pose(
            phantom, axis, mid[0], mid[1]), move_s=1.5, hold_s=1.0,
            subtask_id=5))
    if not legs:
        raise ConfigError("at least one task step is required")

    rng = np.random.default_rng(seed)
    noise_m = lateral_noise_px * PIXEL_PITCH
    # Slowly varying lateral offset: Gaussian breakpoints every 0.5 s,
    # smoothstep-interpolated, so the plant tracks essentially all of it.
    noise_dt = 0.5
    total_s = sum(leg.move_s + leg.hold_s for leg in legs) + 10.0
    knots = rng.normal(0.0, noise_m, size=int(total_s / noise_dt) + 3) \
        if noise_m > 0 else None

    def lateral_offset(t_s: float) -> float:
        if knots is None:
            return 0.0
        i = int(t_s / noise_dt)
        s = _smoothstep(t_s / noise_dt - i)
        return float((1 - s) * knots[i] + s * knots[i + 1])

    events: list[ScriptEvent] = [ScriptEvent(0, "start")]
    dt_us = round(1e6 / SCRIPT_RATE_HZ)
    align_s = 1.0 + 2.0 * delay_ms / 1000.0
    t_us = 0
    for k in range(int(align_s * SCRIPT_RATE_HZ)):
        events.append(ScriptEvent(t_us, "pose", hand=home))
        t_us += dt_us
    current = home
    for leg in legs:
        if leg.subtask_id is not None:
            events.append(ScriptEvent(t_us, "subtask",
                                      subtask_id=leg.subtask_id))
        if leg.metric_window:
            events.append(ScriptEvent(t_us, "window_start"))
        n_move = max(int(leg.move_s * SCRIPT_RATE_HZ), 1)
        for k in range(1, n_move + 1):
            pose = _interp_pose(current, leg.target,
                                _smoothstep(k / n_move))
            offset = pose.rotation_matrix()[:, 0] \
                * lateral_offset(t_us / 1e6)
            events.append(ScriptEvent(
                t_us, "pose",
                hand=dataclasses.replace(pose, trans=pose.trans + offset)))
            t_us += dt_us
        current = leg.target
        if leg.metric_window:
            events.append(ScriptEvent(t_us, "window_end"))
        for k in range(int(leg.hold_s * SCRIPT_RATE_HZ)):
            offset = current.rotation_matrix()[:, 0] \
                * lateral_offset(t_us / 1e6)
            events.append(ScriptEvent(
                t_us, "pose",
                hand=dataclasses.replace(current,
                                         trans=current.trans + offset)))
            t_us += dt_us
    events.append(ScriptEvent(t_us, "stop"))
    return Scenario(delay_ms=delay_ms, seed=seed,
                    lateral_noise_px=lateral_noise_px,
                    force_profile=((0.0, force_n),),
                    script=tuple(events))


# ---------------------------------------------------------------------------
# Runner

def _live_plane(tip: Pose) -> ImagePlane:
    """Image plane hanging below the probe tip: the tip sits at the image's
    top-center, and rows extend along the push axis into the tissue."""
    height = LIVE_ROWS * PIXEL_PITCH
    push = tip.rotation_matrix()[:, 1]
    center = dataclasses.replace(tip, trans=tip.trans + 0.5 * height * push)
    return ImagePlane(pose=center, width=LIVE_COLS * PIXEL_PITCH,
                      height=height, resolution=(LIVE_COLS, LIVE_ROWS))


def _to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)


def run_scenario(scenario: Scenario, out_dir=None) -> RunLog:
    """Execute a scenario deterministically on a simulated clock."""
    if not scenario.script:
        raise ConfigError("scenario has an empty script")
    phantom = SyntheticPhantom()
    model = RobotModel.default()
    clock = SimClock()
    link = Link(DelayConfig(scenario.delay_ms, scenario.jitter_ms), clock,
                seed=scenario.seed)
    controller = FollowerController(model, Q_HOME, phantom=phantom,
                                    dt=CONTROL_DT)
    session = SessionState.initial(CalibrationSet())
    volume = None
    if scenario.mode == "vhmmt":
        volume = generate_sweep(phantom,
                                default_trajectory(phantom,
                                                   spacing=SWEEP_SPACING))

    log = RunLog(scenario=scenario)
    script = sorted(scenario.script, key=lambda e: e.t_us)
    script_end_us = script[-1].t_us
    drain_us = round(2 * scenario.delay_ms * 1000) + 500_000
    limit_us = round(scenario.duration_limit_s * 1e6)
    tick_us = round(CONTROL_DT * 1e6)

    script_i = 0
    seqs = {"pose": 0, "state": 0, "frame": 0}
    hand: Pose | None = None
    follower_pose: Pose | None = None  # delayed feedback, operator side
    last_cmd: tuple[int, Pose] | None = None
    next_frame_us = 0
    next_preview_us = 0
    last_ik_target: Pose | None = None
    frame_index = 0
    stopped = False

    while True:
        t_us = clock.now_us()
        if t_us >= limit_us:
            log.truncated = True
            break
        if t_us > script_end_us + drain_us:
            log.completed = not log.truncated
            break

        if t_us % OPERATOR_TICK_US == 0:
            # --- operator context: script -> session -> pose commands
            while script_i < len(script) and script[script_i].t_us <= t_us:
                ev = script[script_i]
                script_i += 1
                if ev.kind == "pose":
                    hand = ev.hand
                elif ev.kind == "subtask":
                    log.events.append((t_us, "subtask_start",
                                       ev.subtask_id))
                elif ev.kind in ("window_start", "window_end"):
                    log.events.append((t_us, ev.kind, None))
                elif ev.kind == "start":
                    session, _ = handle_event(session, Event.start())
                    log.events.append((t_us, "start", None))
                elif ev.kind == "stop":
                    session, _ = handle_event(session, Event.stop())
                    log.events.append((t_us, "stop", None))
                    stopped = True
                elif ev.kind == "button_down":
                    session, _ = handle_event(session, Event.button_down())
                    log.events.append((t_us, "clutch_down", None))
                elif ev.kind == "button_up":
                    session, _ = handle_event(session, Event.button_up())
                    log.events.append((t_us, "clutch_up", None))
            if hand is not None and not stopped:
                prev_mode = session.mode
                session, cmd = handle_event(
                    session, Event.pose_update(hand, follower_pose))
                if prev_mode is Mode.ALIGNING and session.mode is Mode.TELEOP:
                    log.events.append((t_us, "aligned", None))
                if cmd is not None:
                    link.a_to_b.send(pose_cmd(cmd, t_us, seqs["pose"]))
                    seqs["pose"] += 1
                    log.commands.append((t_us, cmd))
                    last_cmd = (t_us, cmd)
                    # Instant preview (VH-MMT): re-slice the model volume at
                    # the plane of the command issued this very tick, so the
                    # preview never lags the hand by more than the tick.
                    if volume is not None and t_us >= next_preview_us:
                        next_preview_us = t_us + FRAME_PERIOD_US
                        img = reslice(volume, _live_plane(cmd),
                                      timestamp_us=t_us)
                        log.preview_frames.append(FrameRecord(
                            source="preview", t_cmd_us=t_us, t_gen_us=t_us,
                            t_arrival_us=t_us, plane_pose=cmd, force_n=0.0,
                            pixels=_to_u8(img.pixels)))

            # --- follower network context: apply delayed pose commands
            for msg in link.a_to_b.poll():
                if msg.kind is not MessageKind.POSE_CMD:
                    continue
                target = Pose.from_bytes(msg.payload)
                # The script samples poses slower than the command rate, so
                # consecutive commands often repeat; solve each target once.
                if (last_ik_target is not None
                        and np.array_equal(target.to_array(),
                                           last_ik_target.to_array())):
                    continue
                last_ik_target = target
                sols = inverse_kinematics(model, target,
                                          seeds=[controller.plant.q])
                if sols:
                    controller.queue.push(
                        select_solution(sols, controller.plant.q))
                else:
                    log.ik_failures += 1

            # --- operator receive context: delayed feedback and frames
            for msg in link.b_to_a.poll():
                if msg.kind is MessageKind.STATE_FEEDBACK:
                    vals = _STATE_FMT.unpack(msg.payload)
                    follower_pose = Pose.from_array(vals[:7])
                elif msg.kind is MessageKind.US_FRAME:
                    head = _FRAME_FMT.unpack_from(msg.payload)
                    cols, rows = head[8], head[9]
                    pixels = np.frombuffer(
                        msg.payload[_FRAME_FMT.size:],
                        dtype=np.uint8).reshape(rows, cols)
                    log.live_frames.append(FrameRecord(
                        source="live", t_cmd_us=msg.timestamp_us,
                        t_gen_us=msg.timestamp_us, t_arrival_us=t_us,
                        plane_pose=Pose.from_array(head[:7]),
                        force_n=head[7], pixels=pixels))

        # --- follower streaming context at ~30 Hz
        if t_us >= next_frame_us:
            next_frame_us = t_us + FRAME_PERIOD_US
            if not np.all(np.isfinite(controller.plant.q)):
                raise SimulationDiverged(f"non-finite joint state at "
                                        f"{t_us} us")
            flange = controller.flange_pose()
            force = scenario.force_at(t_us / 1e6)
            state_payload = _STATE_FMT.pack(
                *flange.to_array(), controller.last_contact_force,
                *controller.plant.q)
            link.b_to_a.send(TimestampedMessage(
                MessageKind.STATE_FEEDBACK, t_us, seqs["state"],
                state_payload))
            seqs["state"] += 1
            img = live_image(phantom, _live_plane(flange), force,
                             seed=scenario.seed * 1_000_003 + frame_index,
                             timestamp_us=t_us)
            frame_index += 1
            payload = _FRAME_FMT.pack(*flange.to_array(), force,
                                      LIVE_COLS, LIVE_ROWS) \
                + _to_u8(img.pixels).tobytes()
            link.b_to_a.send(TimestampedMessage(
                MessageKind.US_FRAME, t_us, seqs["frame"], payload))
            seqs["frame"] += 1

        # --- follower control context at 1 kHz
        controller.tick()
        if t_us % STATE_LOG_PERIOD_US == 0:
            log.states.append({
                "t_us": t_us,
                "q": controller.plant.q.copy(),
                "flange": controller.flange_pose(),
                "contact_force_n": controller.last_contact_force,
            })
        clock.advance_us(tick_us)

    if out_dir is not None:
        save_runlog(log, out_dir)
    return log


# ---------------------------------------------------------------------------
# Invariants, reports, persistence

def verify_invariants(log: RunLog) -> list[str]:
    """Causality and freshness checks over a finished run; empty = clean."""
    problems = []
    delay_us = round(log.scenario.delay_ms * 1000)
    for name, frames in (("live", log.live_frames),
                         ("preview", log.preview_frames)):
        ts = [f.t_arrival_us for f in frames]
        if ts != sorted(ts):
            problems.append(f"{name} frame arrival times not monotone")
    for f in log.live_frames:
        if f.t_arrival_us - f.t_gen_us < delay_us:
            problems.append(
                f"live frame at {f.t_gen_us} us arrived {f.t_arrival_us - f.t_gen_us} us "
                f"later, below the configured {delay_us} us delay")
            break
    two_periods_us = round(2 * CONTROL_DT * 1e6)
    for f in log.preview_frames:
        if f.t_gen_us - f.t_cmd_us > two_periods_us:
            problems.append("preview frame lags its command by more than "
                            "two control periods")
            break
    t_states = [s["t_us"] for s in log.states]
    if t_states != sorted(t_states):
        problems.append("state log not monotone")
    return problems


def _metric_windows(log: RunLog) -> list[tuple[float, float]]:
    """(start_s, end_s) stretches marked as vessel-following by the script.

    Shifted by the one-way delay: the follower executes (and images) each
    stretch that much after the operator commands it.
    """
    shift = log.scenario.delay_ms / 1000.0
    windows, start = [], None
    for t, kind, _ in log.events:
        if kind == "window_start":
            start = t / 1e6
        elif kind == "window_end" and start is not None:
            windows.append((start + shift, t / 1e6 + shift))
            start = None
    return windows


def _lateral_metrics(log: RunLog, phantom: SyntheticPhantom
                     ) -> tuple[float | None, float | None, float | None]:
    """Lateral RMSE (px) and eccentricity mean/std over the stretches the
    script marks as vessel following, away from the bifurcation."""
    windows = _metric_windows(log)
    if not windows:
        return None, None, None
    threshold = default_threshold(phantom.background_mean,
                                  phantom.speckle_sigma) * 255.0
    bif_x = phantom.bifurcation[0]
    cols_center = (LIVE_COLS - 1) / 2.0
    centroids, es = [], []
    for f in log.live_frames:
        t_s = f.t_gen_us / 1e6
        if not any(lo <= t_s <= hi for lo, hi in windows):
            continue
        # Skip stations where the branch merges with the large vessel in
        # cross-section (up to ~16 mm past the bifurcation): the combined
        # blob has no meaningful single centroid or eccentricity.
        x = f.plane_pose.trans[0]
        if -0.006 < x - bif_x < 0.016:
            continue
        fit = segment_vessel(f.pixels.astype(float), threshold)
        if not fit.valid:
            continue
        centroids.append(fit.centroid[0])
        es.append(eccentricity(fit))
    rmse = lateral_rmse(centroids, cols_center) if centroids else None
    if len(es) >= 2:
        e_mean, e_std = eccentricity_stats(es)
    else:
        e_mean = e_std = None
    return rmse, e_mean, e_std


def report(log: RunLog) -> dict:
    """Metrics report: subtask times, lateral RMSE, eccentricity, lags."""
    if not log.states:
        raise ValueError("cannot report on an empty log")
    phantom = SyntheticPhantom()
    timeline = log.timeline()
    rmse, e_mean, e_std = _lateral_metrics(log, phantom)
    live_lags = [(f.t_arrival_us - f.t_gen_us) / 1000.0
                 for f in log.live_frames]
    preview_lags = [(f.t_gen_us - f.t_cmd_us) / 1000.0
                    for f in log.preview_frames]

    def _stats(xs):
        if not xs:
            return None
        return {"mean": float(np.mean(xs)), "min": float(np.min(xs)),
                "max": float(np.max(xs))}

    return {
        "mode": log.scenario.mode,
        "delay_ms": log.scenario.delay_ms,
        "seed": log.scenario.seed,
        "completed": log.completed,
        "truncated": log.truncated,
        "duration_s": log.states[-1]["t_us"] / 1e6,
        "subtask_times_s": {str(k): round(v, 6)
                            for k, v in timeline.durations().items()},
        "lateral_rmse_px": rmse,
        "eccentricity_mean": e_mean,
        "eccentricity_std": e_std,
        "live_lag_ms": _stats(live_lags),
        "preview_lag_ms": _stats(preview_lags),
        "n_live_frames": len(log.live_frames),
        "n_preview_frames": len(log.preview_frames),
        "n_commands": len(log.commands),
        "ik_failures": log.ik_failures,
        "invariant_violations": verify_invariants(log),
    }


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)


def report_csv(rep: dict) -> str:
    """Flat key,value rows in sorted key order."""
    rows = ["metric,value"]

    def _flatten(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                _flatten(f"{prefix}{k}." if prefix else f"{k}.",
                         obj[k]) if isinstance(obj[k], dict) \
                    else rows.append(f"{prefix}{k},{obj[k]}")
        else:
            rows.append(f"{prefix.rstrip('.')},{obj}")

    _flatten("", rep)
    return "\n".join(rows) + "\n"


def save_runlog(log: RunLog, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "scenario": log.scenario.to_json(),
        "completed": log.completed,
        "truncated": log.truncated,
        "ik_failures": log.ik_failures,
        "events": [[t, kind, detail] for t, kind, detail in log.events],
        "commands": [{"t_us": t, "pose": p.to_json()}
                     for t, p in log.commands],
        "live_frames": [
            {"t_gen_us": f.t_gen_us, "t_arrival_us": f.t_arrival_us,
             "force_n": f.force_n, "plane_pose": f.plane_pose.to_json()}
            for f in log.live_frames],
        "preview_frames": [
            {"t_cmd_us": f.t_cmd_us, "t_gen_us": f.t_gen_us,
             "plane_pose": f.plane_pose.to_json()}
            for f in log.preview_frames],
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    lines = ["t_us," + ",".join(f"q{i}" for i in range(7))
             + ",x,y,z,contact_force_n"]
    for s in log.states:
        fl = s["flange"].trans
        lines.append(",".join(
            [str(s["t_us"])] + [repr(float(v)) for v in s["q"]]
            + [repr(float(v)) for v in fl]
            + [repr(float(s["contact_force_n"]))]))
    (out / "states.csv").write_text("\n".join(lines) + "\n")
    if log.live_frames:
        np.savez_compressed(
            out / "frames.npz",
            live=np.stack([f.pixels for f in log.live_frames]),
            preview=np.stack([f.pixels for f in log.preview_frames])
            if log.preview_frames else np.zeros((0,)))


def load_runlog(run_dir) -> RunLog:
    """Rebuild a RunLog from a directory written by save_runlog; the
    result carries everything report() and verify_invariants() consume."""
    run = Path(run_dir)
    meta = json.loads((run / "run.json").read_text())
    log = RunLog(scenario=Scenario.from_json(meta["scenario"]),
                 completed=bool(meta["completed"]),
                 truncated=bool(meta["truncated"]),
                 ik_failures=int(meta["ik_failures"]))
    log.events = [(int(t), kind, detail)
                  for t, kind, detail in meta["events"]]
    log.commands = [(int(c["t_us"]), Pose.from_json(c["pose"]))
                    for c in meta.get("commands", [])]
    npz_path = run / "frames.npz"
    if npz_path.exists():
        frames = np.load(npz_path)
        live_px, preview_px = frames["live"], frames["preview"]
    else:
        live_px = preview_px = np.zeros((0,))
    for i, f in enumerate(meta["live_frames"]):
        log.live_frames.append(FrameRecord(
            source="live", t_cmd_us=int(f["t_gen_us"]),
            t_gen_us=int(f["t_gen_us"]),
            t_arrival_us=int(f["t_arrival_us"]),
            plane_pose=Pose.from_json(f["plane_pose"]),
            force_n=float(f["force_n"]), pixels=live_px[i]))
    for i, f in enumerate(meta["preview_frames"]):
        log.preview_frames.append(FrameRecord(
            source="preview", t_cmd_us=int(f["t_cmd_us"]),
            t_gen_us=int(f["t_gen_us"]), t_arrival_us=int(f["t_gen_us"]),
            plane_pose=Pose.from_json(f["plane_pose"]), force_n=0.0,
            pixels=preview_px[i] if preview_px.ndim == 3 else None))
    for line in (run / "states.csv").read_text().splitlines()[1:]:
        cells = line.split(",")
        log.states.append({
            "t_us": int(cells[0]),
            "q": np.array([float(v) for v in cells[1:8]]),
            "flange": Pose(quat=np.array([1.0, 0, 0, 0]),
                           trans=np.array([float(v)
                                           for v in cells[8:11]])),
            "contact_force_n": float(cells[11]),
        })
    return log


def write_report(rep: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(rep))
    (out / "report.csv").write_text(report_csv(rep))
