"""Delay-emulated message transport between operator and follower.

Messages are framed with a CRC-protected binary codec and travel through
per-kind release queues that hold each message until its configured one-way
delay (plus optional non-reordering jitter) has elapsed. A simulated clock
makes delay measurements deterministic; a wall clock and a socket-pair
binding are available for live runs.
"""
from __future__ import annotations

import dataclasses
import math
import socket
import struct
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .se3 import Pose

MAGIC = 0x5648
HEADER = struct.Struct("<HBBIQI")   # magic, kind, flags, seq, timestamp, len
HEADER_LEN = HEADER.size            # 20
CRC_LEN = 4
MIN_FRAME_LEN = HEADER_LEN + CRC_LEN
MAX_PAYLOAD = 1 << 20

DEFAULT_POLL_TICK_MS = 1.0
CONTROL_RETRY_MS = 200.0
CONTROL_MAX_RETRIES = 3
RTT_SAMPLES = 100
RTT_TIMEOUT_S = 10.0
POSE_QUAT_NORM_TOL = 1e-3


class MessageKind(IntEnum):
    POSE_CMD = 0
    STATE_FEEDBACK = 1
    FORCE_FEEDBACK = 2
    US_FRAME = 3
    CONTROL = 4
    POINT_CLOUD_CHUNK = 5


class CorruptFrame(ValueError):
    pass


class UnknownKind(ValueError):
    pass


class TruncatedFrame(ValueError):
    pass


class Timeout(RuntimeError):
    pass


@dataclass(frozen=True)
class TimestampedMessage:
    kind: MessageKind
    timestamp_us: int
    seq: int
    payload: bytes = b""
    flags: int = 0


def encode(msg: TimestampedMessage) -> bytes:
    """Frame layout, little-endian: magic u16 | kind u8 | flags u8 | seq u32
    | timestamp u64 | payload_len u32 | payload | crc32 of all prior bytes."""
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError("payload exceeds 1 MiB limit")
    head = HEADER.pack(MAGIC, int(msg.kind), msg.flags, msg.seq,
                       msg.timestamp_us, len(msg.payload))
    body = head + bytes(msg.payload)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(frame: bytes) -> TimestampedMessage:
    """Inverse of encode. The CRC is checked before any field is trusted, so
    every single-bit corruption surfaces as CorruptFrame."""
    if len(frame) < MIN_FRAME_LEN:
        raise TruncatedFrame(f"frame of {len(frame)} bytes, need >= 24")
    body, crc = frame[:-CRC_LEN], frame[-CRC_LEN:]
    if zlib.crc32(body) != struct.unpack("<I", crc)[0]:
        raise CorruptFrame("CRC mismatch")
    magic, kind, flags, seq, timestamp, plen = HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CorruptFrame(f"bad magic 0x{magic:04x}")
    if plen != len(body) - HEADER_LEN:
        raise TruncatedFrame("payload length field disagrees with frame size")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise UnknownKind(f"message kind {kind}") from None
    return TimestampedMessage(kind=kind, timestamp_us=timestamp, seq=seq,
                              payload=body[HEADER_LEN:], flags=flags)


def pose_cmd(pose: Pose, timestamp_us: int, seq: int) -> TimestampedMessage:
    return TimestampedMessage(MessageKind.POSE_CMD, timestamp_us, seq,
                              pose.to_bytes())


def parse_pose(msg: TimestampedMessage) -> Pose:
    if len(msg.payload) != 56:
        raise CorruptFrame("pose payload must be 7 float64")
    return Pose.from_bytes(msg.payload)


# ---------------------------------------------------------------------------
# Clocks

class SimClock:
    """Manually advanced microsecond clock for deterministic delay tests."""

    def __init__(self, start_us: int = 0):
        self._now = int(start_us)

    def now_us(self) -> int:
        return self._now

    def advance_us(self, dt_us: int) -> None:
        if dt_us < 0:
            raise ValueError("clock cannot run backwards")
        self._now += int(dt_us)

    def advance_ms(self, dt_ms: float) -> None:
        self.advance_us(round(dt_ms * 1000))


class WallClock:
    """Monotonic wall clock in microseconds."""

    def __init__(self):
        self._t0 = time.monotonic_ns()

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0) // 1000


# ---------------------------------------------------------------------------
# Delay emulation

@dataclass(frozen=True)
class DelayConfig:
    one_way_delay_ms: float = 0.0
    jitter_ms: float = 0.0
    drop_stale: bool = True

    def __post_init__(self):
        if self.one_way_delay_ms < 0:
            raise ValueError("delay must be >= 0")
        if not 0 <= self.jitter_ms <= max(self.one_way_delay_ms, 0):
            raise ValueError("jitter must be within [0, delay]")

    @property
    def max_age_ms(self) -> float:
        """Staleness threshold: twice the one-way delay plus 100 ms."""
        return 2.0 * self.one_way_delay_ms + 100.0


class DelayQueue:
    """FIFO whose entries become visible only after their release time.

    Jitter is sampled per message, but the release time is clamped to be
    no earlier than the previous message's, so jitter never reorders
    (ordered-channel semantics).
    """

    def __init__(self, rng: np.random.Generator | None = None):
        self._items: deque[tuple[int, TimestampedMessage]] = deque()
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._last_release_us = 0

    def __len__(self):
        return len(self._items)

    def enqueue(self, msg: TimestampedMessage, now_us: int,
                cfg: DelayConfig) -> None:
        delay_ms = cfg.one_way_delay_ms
        if cfg.jitter_ms > 0:
            delay_ms += self._rng.uniform(-cfg.jitter_ms, cfg.jitter_ms)
        release = now_us + round(delay_ms * 1000)
        release = max(release, self._last_release_us)
        self._last_release_us = release
        self._items.append((release, msg))

    def release(self, now_us: int) -> list[TimestampedMessage]:
        out = []
        while self._items and self._items[0][0] <= now_us:
            out.append(self._items.popleft()[1])
        return out


def delay_enqueue(queue: DelayQueue, msg: TimestampedMessage, now_us: int,
                  cfg: DelayConfig) -> None:
    queue.enqueue(msg, now_us, cfg)


def delay_release(queue: DelayQueue, now_us: int) -> list[TimestampedMessage]:
    return queue.release(now_us)


# ---------------------------------------------------------------------------
# Validation and statistics

ACCEPT = "accept"
DROP_STALE = "drop_stale"
DROP_CORRUPT = "drop_corrupt"


def validate_incoming(msg: TimestampedMessage, last_accepted_us: int,
                      now_us: int, max_age_ms: float) -> str:
    """Staleness and sanity gate applied before a message is acted on."""
    if msg.timestamp_us <= last_accepted_us:
        return DROP_STALE
    if msg.timestamp_us < now_us - round(max_age_ms * 1000):
        return DROP_STALE
    if msg.kind is MessageKind.POSE_CMD:
        try:
            arr = np.frombuffer(msg.payload, dtype="<f8", count=7)
        except ValueError:
            return DROP_CORRUPT
        if not np.all(np.isfinite(arr)):
            return DROP_CORRUPT
        if abs(float(np.linalg.norm(arr[:4])) - 1.0) > POSE_QUAT_NORM_TOL:
            return DROP_CORRUPT
    return ACCEPT


@dataclass
class ChannelStats:
    sent: dict = field(default_factory=dict)        # kind -> count
    received: dict = field(default_factory=dict)    # kind -> count
    stale_drops: int = 0
    corrupt_drops: int = 0
    rtt_ms: float | None = None
    started_us: int = 0
    last_us: int = 0

    def note_sent(self, kind: MessageKind, now_us: int) -> None:
        self.sent[kind] = self.sent.get(kind, 0) + 1
        self.last_us = max(self.last_us, now_us)

    def note_received(self, kind: MessageKind, now_us: int) -> None:
        self.received[kind] = self.received.get(kind, 0) + 1
        self.last_us = max(self.last_us, now_us)

    def rate_hz(self, kind: MessageKind) -> float:
        span = (self.last_us - self.started_us) / 1e6
        if span <= 0:
            return 0.0
        return self.received.get(kind, 0) / span


class Channel:
    """One direction of the link: per-kind delay queues plus statistics.

    Each message kind travels through its own queue, so a heavy image
    stream cannot delay pose commands (stream separation).
    """

    def __init__(self, cfg: DelayConfig, clock, seed: int = 0):
        self.cfg = cfg
        self.clock = clock
        self._queues = {k: DelayQueue(np.random.default_rng(seed + int(k)))
                        for k in MessageKind}
        self.stats = ChannelStats(started_us=clock.now_us())
        self._last_accepted = {k: -1 for k in MessageKind}

    def set_delay(self, cfg: DelayConfig) -> None:
        self.cfg = cfg

    def send(self, msg: TimestampedMessage) -> None:
        now = self.clock.now_us()
        self._queues[msg.kind].enqueue(msg, now, self.cfg)
        self.stats.note_sent(msg.kind, now)

    def poll(self) -> list[TimestampedMessage]:
        """Messages whose delay has elapsed, validated, in release order."""
        now = self.clock.now_us()
        out = []
        for kind in MessageKind:
            for msg in self._queues[kind].release(now):
                verdict = validate_incoming(msg, self._last_accepted[kind],
                                            now, self.cfg.max_age_ms)
                if verdict == ACCEPT or not self.cfg.drop_stale:
                    self._last_accepted[kind] = max(
                        self._last_accepted[kind], msg.timestamp_us)
                    self.stats.note_received(kind, now)
                    out.append(msg)
                elif verdict == DROP_STALE:
                    self.stats.stale_drops += 1
                else:
                    self.stats.corrupt_drops += 1
        return out


class Link:
    """Bidirectional pair of channels sharing one clock and delay config."""

    def __init__(self, cfg: DelayConfig, clock, seed: int = 0):
        self.clock = clock
        self.a_to_b = Channel(cfg, clock, seed=seed)
        self.b_to_a = Channel(cfg, clock, seed=seed + 100)

    def set_delay(self, cfg: DelayConfig) -> None:
        self.a_to_b.set_delay(cfg)
        self.b_to_a.set_delay(cfg)


def measure_rtt(link: Link, samples: int = RTT_SAMPLES,
                poll_tick_ms: float = DEFAULT_POLL_TICK_MS,
                timeout_s: float = RTT_TIMEOUT_S) -> float:
    """Mean ping/pong round-trip over Control messages, in milliseconds.

    Endpoint B echoes each ping immediately on receipt. With a SimClock the
    loop advances the clock by one poll tick per iteration; with a wall
    clock it sleeps instead, and zero-delay pings return on the first poll.
    """
    clock = link.clock
    advance = getattr(clock, "advance_ms", None)
    tick_us = round(poll_tick_ms * 1000)
    total_us = 0
    for i in range(samples):
        t0 = clock.now_us()
        ping = TimestampedMessage(MessageKind.CONTROL, t0, seq=i,
                                  payload=b"ping")
        link.a_to_b.send(ping)
        got = False
        while not got:
            for msg in link.a_to_b.poll():
                if msg.payload == b"ping":
                    link.b_to_a.send(TimestampedMessage(
                        MessageKind.CONTROL, clock.now_us(), seq=msg.seq,
                        payload=b"pong"))
            for msg in link.b_to_a.poll():
                if msg.payload == b"pong" and msg.seq == i:
                    got = True
            if got:
                break
            if clock.now_us() - t0 > timeout_s * 1e6:
                raise Timeout(f"no pong for ping {i} within {timeout_s} s")
            if advance is not None:
                advance(poll_tick_ms)
            else:
                time.sleep(tick_us / 1e6)
        total_us += clock.now_us() - t0
    rtt = total_us / samples / 1000.0
    link.a_to_b.stats.rtt_ms = rtt
    link.b_to_a.stats.rtt_ms = rtt
    return rtt


# ---------------------------------------------------------------------------
# Reliable Control delivery

@dataclass
class _PendingControl:
    msg: TimestampedMessage
    sent_us: int
    retries: int = 0


class ControlSender:
    """Ack+retry wrapper for Control messages (3 retries, 200 ms apart).

    Pose and state streams are fire-and-forget, but session transitions
    must not be lost, so Control frames are resent until acknowledged.
    """

    def __init__(self, channel: Channel, clock,
                 retry_ms: float = CONTROL_RETRY_MS,
                 max_retries: int = CONTROL_MAX_RETRIES):
        self.channel = channel
        self.clock = clock
        self.retry_ms = retry_ms
        self.max_retries = max_retries
        self._pending: dict[int, _PendingControl] = {}
        self.failed: list[TimestampedMessage] = []

    def send(self, msg: TimestampedMessage) -> None:
        if msg.kind is not MessageKind.CONTROL:
            raise ValueError("ControlSender only carries Control messages")
        self._pending[msg.seq] = _PendingControl(msg, self.clock.now_us())
        self.channel.send(msg)

    def handle_ack(self, seq: int) -> None:
        self._pending.pop(seq, None)

    def tick(self) -> None:
        """Resend overdue messages; give up after max_retries."""
        now = self.clock.now_us()
        overdue = round(self.retry_ms * 1000)
        for seq in list(self._pending):
            p = self._pending[seq]
            if now - p.sent_us < overdue:
                continue
            if p.retries >= self.max_retries:
                self.failed.append(p.msg)
                del self._pending[seq]
                continue
            p.retries += 1
            p.sent_us = now
            self.channel.send(dataclasses.replace(
                p.msg, timestamp_us=now))

    @property
    def pending(self) -> int:
        return len(self._pending)


# ---------------------------------------------------------------------------
# Transport bindings

class LoopbackTransport:
    """In-process frame pipe: bytes in, bytes out, no delay of its own."""

    def __init__(self):
        self._frames: deque[bytes] = deque()

    def send_frame(self, frame: bytes) -> None:
        self._frames.append(bytes(frame))

    def recv_frames(self) -> list[bytes]:
        out = list(self._frames)
        self._frames.clear()
        return out


class SocketPairTransport:
    """Length-prefixed frames over a local socket pair.

    Each side owns one socket; frames are u32-length-prefixed so the stream
    can be re-framed on receipt.
    """

    _LEN = struct.Struct("<I")

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setblocking(False)
        self._buf = b""

    @classmethod
    def pair(cls) -> tuple["SocketPairTransport", "SocketPairTransport"]:
        a, b = socket.socketpair()
        return cls(a), cls(b)

    def send_frame(self, frame: bytes) -> None:
        self._sock.sendall(self._LEN.pack(len(frame)) + frame)

    def recv_frames(self) -> list[bytes]:
        try:
            while True:
                chunk = self._sock.recv(65536)
                if not chunk:
                    break
                self._buf += chunk
        except BlockingIOError:
            pass
        out = []
        while len(self._buf) >= self._LEN.size:
            (n,) = self._LEN.unpack_from(self._buf)
            if len(self._buf) < self._LEN.size + n:
                break
            out.append(self._buf[self._LEN.size:self._LEN.size + n])
            self._buf = self._buf[self._LEN.size + n:]
        return out

    def close(self) -> None:
        self._sock.close()
