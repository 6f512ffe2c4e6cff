"""Operator-facing service endpoint: bridges the simulator to a browser
console over a WebSocket, streaming preview/live images and telemetry and
accepting interactive probe, clutch, delay, and session commands.

The simulation core (`InteractiveSim`) is synchronous and deterministic on
its own simulated clock; the WebSocket handler advances it with wall-clock
elapsed time, so network delay emulation behaves in real time. Outgoing
frames go through a bounded drop-oldest buffer so a stalled client can
never back-pressure the control loop.
"""
from __future__ import annotations

import asyncio
import base64
import dataclasses
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles
from scipy import ndimage

from .calib import CalibrationSet
from .control import FollowerController
from .harness import (CONTROL_DT, FRAME_PERIOD_US, LIVE_COLS, LIVE_ROWS,
                      MODES, Q_HOME, SWEEP_SPACING, ConfigError, _FRAME_FMT,
                      _live_plane, _STATE_FMT, _to_u8)
from .kinematics import (RobotModel, inverse_kinematics, select_solution)
from .netsim import (DelayConfig, Link, MessageKind, SimClock,
                     TimestampedMessage, pose_cmd)
from .phantom import SyntheticPhantom
from .se3 import Pose
from .session import Event, SessionState, handle_event
from .usmodel import (default_trajectory, generate_sweep, live_image,
                      reslice)

logger = logging.getLogger(__name__)

CONSOLE_FRAME_PX = 256      # console images ship square at this size
FRAME_BUFFER_DEPTH = 3      # outgoing frames beyond this are dropped
TICK_US = round(CONTROL_DT * 1e6)

CLIENT_TYPES = ("pose", "button", "set_delay", "set_mode", "start", "stop")


@dataclass(frozen=True)
class GatewayConfig:
    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    mode: str = "vhmmt"
    seed: int = 0
    static_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.delay_ms < 0:
            raise ConfigError("delay must be >= 0")


def _console_png(pixels: np.ndarray) -> tuple[int, int, str]:
    """(w, h, base64) of an 8-bit grayscale frame resampled for the console."""
    zoom = (CONSOLE_FRAME_PX / pixels.shape[0],
            CONSOLE_FRAME_PX / pixels.shape[1])
    resized = ndimage.zoom(pixels.astype(float), zoom, order=1)
    data = np.clip(np.rint(resized), 0, 255).astype(np.uint8).tobytes()
    return (CONSOLE_FRAME_PX, CONSOLE_FRAME_PX,
            base64.b64encode(data).decode("ascii"))


@dataclass
class InteractiveSim:
    """Interactive counterpart of the scripted scenario runner: the same
    delayed-link + follower-controller topology, but commands come from a
    connected client instead of a script."""

    config: GatewayConfig

    def __post_init__(self):
        self.phantom = SyntheticPhantom()
        self.model = RobotModel.default()
        self.clock = SimClock()
        self.controller = FollowerController(self.model, Q_HOME,
                                             phantom=self.phantom,
                                             dt=CONTROL_DT)
        self.session = SessionState.initial(CalibrationSet())
        self.mode = self.config.mode
        self._volume = None
        self.link = Link(DelayConfig(self.config.delay_ms,
                                     self.config.jitter_ms),
                         self.clock, seed=self.config.seed)
        self.outgoing: deque = deque()          # state/stats, unbounded-ish
        self.frame_buffer: deque = deque(maxlen=FRAME_BUFFER_DEPTH)
        self.frame_drops = 0
        self.follower_pose: Pose | None = None  # delayed feedback
        self._seqs = {"pose": 0, "state": 0, "frame": 0}
        self._last_ik_target: Pose | None = None
        self._next_frame_us = 0
        self._next_state_us = 0
        self._next_preview_us = 0
        self._next_stats_us = 0
        self._frame_index = 0
        self._residual_us = 0

    @property
    def volume(self):
        if self._volume is None and self.mode == "vhmmt":
            self._volume = generate_sweep(
                self.phantom,
                default_trajectory(self.phantom, spacing=SWEEP_SPACING))
        return self._volume

    # -- client messages -----------------------------------------------

    def handle_client(self, obj) -> None:
        """Apply one decoded client message; unknown types are warnings."""
        if not isinstance(obj, dict) or obj.get("type") not in CLIENT_TYPES:
            logger.warning("ignoring unknown client message: %r", obj)
            return
        kind = obj["type"]
        try:
            if kind == "pose":
                self._handle_pose(obj)
            elif kind == "button":
                ev = Event.button_down() if obj.get("down") \
                    else Event.button_up()
                self.session, _ = handle_event(self.session, ev)
            elif kind == "start":
                self.session, _ = handle_event(self.session, Event.start())
            elif kind == "stop":
                self.session, _ = handle_event(self.session, Event.stop())
            elif kind == "set_delay":
                self.set_delay(float(obj["ms"]))
            elif kind == "set_mode":
                self.set_mode(str(obj["mode"]))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            logger.warning("malformed %r message: %s", kind, exc)

    def _handle_pose(self, obj) -> None:
        pose = Pose.from_array(np.asarray(obj["pose"], dtype=float))
        t_us = self.clock.now_us()
        self.session, cmd = handle_event(
            self.session, Event.pose_update(pose, self.follower_pose))
        if cmd is None:
            return
        self.link.a_to_b.send(pose_cmd(cmd, t_us, self._seqs["pose"]))
        self._seqs["pose"] += 1
        if self.volume is not None and t_us >= self._next_preview_us:
            self._next_preview_us = t_us + FRAME_PERIOD_US
            img = reslice(self.volume, _live_plane(cmd), timestamp_us=t_us)
            self._push_frame("preview_frame", _to_u8(img.pixels), t_us)

    def set_delay(self, ms: float) -> None:
        if ms < 0:
            raise ConfigError("delay must be >= 0")
        cfg = dataclasses.replace(self.link.a_to_b.cfg, one_way_delay_ms=ms)
        self.link = Link(cfg, self.clock, seed=self.config.seed)

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        self.mode = mode

    # -- simulation ----------------------------------------------------

    def _push_frame(self, kind: str, pixels: np.ndarray, t_us: int) -> None:
        if len(self.frame_buffer) == self.frame_buffer.maxlen:
            self.frame_drops += 1
        w, h, data = _console_png(pixels)
        self.frame_buffer.append({"type": kind, "w": w, "h": h,
                                  "t": t_us, "data": data})

    def step(self, dt_us: int) -> None:
        """Advance the simulation by dt_us of its own clock."""
        self._residual_us += int(dt_us)
        while self._residual_us >= TICK_US:
            self._residual_us -= TICK_US
            self._tick()

    def _tick(self) -> None:
        t_us = self.clock.now_us()

        # follower side: delayed pose commands -> IK -> controller queue
        for msg in self.link.a_to_b.poll():
            if msg.kind is not MessageKind.POSE_CMD:
                continue
            target = Pose.from_bytes(msg.payload)
            if (self._last_ik_target is not None
                    and np.array_equal(target.to_array(),
                                       self._last_ik_target.to_array())):
                continue
            self._last_ik_target = target
            sols = inverse_kinematics(self.model, target,
                                      seeds=[self.controller.plant.q])
            if sols:
                self.controller.queue.push(
                    select_solution(sols, self.controller.plant.q))

        # follower streaming at ~30 Hz
        if t_us >= self._next_frame_us:
            self._next_frame_us = t_us + FRAME_PERIOD_US
            flange = self.controller.flange_pose()
            self.link.b_to_a.send(TimestampedMessage(
                MessageKind.STATE_FEEDBACK, t_us, self._seqs["state"],
                _STATE_FMT.pack(*flange.to_array(),
                                self.controller.last_contact_force,
                                *self.controller.plant.q)))
            self._seqs["state"] += 1
            img = live_image(self.phantom, _live_plane(flange), 10.0,
                             seed=self.config.seed * 1_000_003
                             + self._frame_index,
                             timestamp_us=t_us)
            self._frame_index += 1
            payload = _FRAME_FMT.pack(*flange.to_array(), 10.0,
                                      LIVE_COLS, LIVE_ROWS) \
                + _to_u8(img.pixels).tobytes()
            self.link.b_to_a.send(TimestampedMessage(
                MessageKind.US_FRAME, t_us, self._seqs["frame"], payload))
            self._seqs["frame"] += 1

        # operator side: delayed feedback and live frames
        for msg in self.link.b_to_a.poll():
            if msg.kind is MessageKind.STATE_FEEDBACK:
                vals = _STATE_FMT.unpack(msg.payload)
                self.follower_pose = Pose.from_array(vals[:7])
            elif msg.kind is MessageKind.US_FRAME:
                head = _FRAME_FMT.unpack_from(msg.payload)
                pixels = np.frombuffer(
                    msg.payload[_FRAME_FMT.size:],
                    dtype=np.uint8).reshape(head[9], head[8])
                self._push_frame("live_frame", pixels, msg.timestamp_us)

        # telemetry at ~30 Hz, stats at 1 Hz
        if t_us >= self._next_state_us:
            self._next_state_us = t_us + FRAME_PERIOD_US
            fp = self.follower_pose
            err = self.session.last_alignment_error
            self.outgoing.append({
                "type": "state",
                "follower_pose": None if fp is None
                else [float(v) for v in fp.to_array()],
                "force": float(self.controller.last_contact_force),
                "fsm_mode": self.session.mode.value,
                "align_error": None if err is None else float(err),
            })
        if t_us >= self._next_stats_us:
            self._next_stats_us = t_us + 1_000_000
            self.outgoing.append({
                "type": "stats",
                "rtt_ms": 2.0 * self.link.a_to_b.cfg.one_way_delay_ms,
                "drops": self.frame_drops,
            })

        self.controller.tick()
        self.clock.advance_us(TICK_US)

    def drain(self) -> list[dict]:
        """All pending server messages, frames first-in first-out."""
        out = list(self.frame_buffer) + list(self.outgoing)
        self.frame_buffer.clear()
        self.outgoing.clear()
        return out


def create_app(config: GatewayConfig | None = None):
    """FastAPI app exposing the WebSocket endpoint and console assets."""
    config = config or GatewayConfig()
    app = FastAPI(title="teleus gateway")
    app.state.config = config
    app.state.client_connected = False
    app.state.sim = None

    @app.websocket("/ws")
    async def operator(ws: WebSocket):
        await ws.accept()
        if app.state.client_connected:
            # single-master teleoperation: one operator at a time
            await ws.close(code=1013, reason="operator already connected")
            return
        app.state.client_connected = True
        sim = InteractiveSim(config)
        app.state.sim = sim
        inbox: asyncio.Queue = asyncio.Queue()

        async def receiver():
            while True:
                text = await ws.receive_text()
                try:
                    await inbox.put(json.loads(text))
                except json.JSONDecodeError:
                    logger.warning("malformed JSON from client: %.80s",
                                   text)

        recv_task = asyncio.create_task(receiver())
        last = time.monotonic()
        try:
            while True:
                await asyncio.sleep(0.005)
                if recv_task.done():
                    recv_task.result()   # surfaces the disconnect
                while not inbox.empty():
                    sim.handle_client(inbox.get_nowait())
                now = time.monotonic()
                sim.step(round((now - last) * 1e6))
                last = now
                for msg in sim.drain():
                    await ws.send_text(json.dumps(msg))
        except (WebSocketDisconnect, RuntimeError):
            # disconnects surface as RuntimeError when racing a send
            pass
        finally:
            recv_task.cancel()
            app.state.client_connected = False

    static_dir = config.static_dir or str(
        Path(__file__).resolve().parents[2] / "frontend" / "dist")
    if Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="console")
    return app
