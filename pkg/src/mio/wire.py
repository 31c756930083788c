"""Pose uplink: fixed 70-byte little-endian frames over a stream socket.

Frame layout::

    magic  b"MP"        2 bytes
    seq    u32          4
    t      f64          8
    x y z  3 x f64     24
    qw..qz 4 x f64     32
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import BadMagic, BindFailure, TruncatedFrame, UplinkUnavailable
from .se3 import CSV_HEADER, PoseSE3

log = logging.getLogger(__name__)

MAGIC = b"MP"
FRAME = struct.Struct("<2sId3d4d")
FRAME_SIZE = FRAME.size  # 70
assert FRAME_SIZE == 70


@dataclass(frozen=True)
class PoseMessage:
    seq: int
    timestamp: float
    translation: tuple
    rotation: tuple  # (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        if not 0 <= self.seq <= 0xFFFFFFFF:
            raise ValueError(f"seq {self.seq} does not fit in u32")
        if len(self.translation) != 3 or len(self.rotation) != 4:
            raise ValueError("translation needs 3 and rotation 4 components")
        n = math.sqrt(sum(v * v for v in self.rotation))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion norm {n} is not 1")

    @classmethod
    def from_pose(cls, seq: int, t: float, pose: PoseSE3) -> PoseMessage:
        return cls(seq, t, tuple(pose.translation), tuple(pose.rotation))

    def pose(self) -> PoseSE3:
        return PoseSE3(self.rotation, self.translation)


def encode_pose(msg: PoseMessage) -> bytes:
    return FRAME.pack(MAGIC, msg.seq, msg.timestamp, *msg.translation, *msg.rotation)


def decode_pose(data: bytes) -> PoseMessage:
    if len(data) >= 2 and data[:2] != MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:2])!r}")
    if len(data) < FRAME_SIZE:
        raise TruncatedFrame(f"frame has {len(data)} bytes, need {FRAME_SIZE}")
    if len(data) > FRAME_SIZE:
        raise ValueError(f"frame has {len(data)} bytes, expected exactly {FRAME_SIZE}")
    _, seq, t, x, y, z, qw, qx, qy, qz = FRAME.unpack(data)
    return PoseMessage(seq, t, (x, y, z), (qw, qx, qy, qz))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


# --- collector --------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: _Server = self.server  # type: ignore[assignment]
        conn_id = next(server.counter)
        path = server.out_dir / f"poses_{conn_id:04d}.csv"
        n = 0
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            fh.flush()
            while True:
                data = _recv_exact(self.request, FRAME_SIZE)
                if not data:
                    break
                try:
                    msg = decode_pose(data)
                except (BadMagic, TruncatedFrame, ValueError) as exc:
                    log.warning("connection %d from %s closed: %s", conn_id, self.client_address, exc)
                    server.errors += 1
                    break
                w.writerow([f"{msg.timestamp:.9g}", *(f"{v:.9g}" for v in msg.translation),
                            *(f"{v:.9g}" for v in msg.rotation)])
                fh.flush()
                n += 1
        with server.lock:
            server.connections[conn_id] = (path, n)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class PoseSink:
    """Pose collector: one trajectory CSV per client connection."""

    def __init__(self, bind: tuple, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            self._server = _Server(bind, _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {bind}: {exc}") from exc
        self._server.out_dir = self.out_dir
        self._server.counter = itertools.count(1)
        self._server.lock = threading.Lock()
        self._server.connections = {}
        self._server.errors = 0
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple:
        return self._server.server_address[:2]

    @property
    def connections(self) -> dict:
        """Finished connections: id -> (csv path, poses written)."""
        with self._server.lock:
            return dict(self._server.connections)

    @property
    def errors(self) -> int:
        return self._server.errors

    def start(self) -> PoseSink:
        self._thread = threading.Thread(target=self._server.serve_forever, name="pose-sink", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_sink(bind: tuple, out_dir) -> PoseSink:
    """Start a collector in a background thread and return it."""
    return PoseSink(bind, out_dir).start()


def parse_address(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


# --- uplink client ----------------------------------------------------------

class UplinkClient:
    """Fire-and-forget sender; reconnects at most once per ``retry_interval``.

    Messages offered while disconnected are dropped and counted.
    """

    def __init__(self, address: tuple, retry_interval: float = 1.0, timeout: float = 1.0):
        self.address = address
        self.retry_interval = retry_interval
        self.timeout = timeout
        self.sent = 0
        self.dropped = 0
        self._sock: socket.socket | None = None
        self._last_attempt = -math.inf

    def _connect(self) -> None:
        now = time.monotonic()
        if now - self._last_attempt < self.retry_interval:
            raise UplinkUnavailable(f"{self.address} unavailable, waiting to retry")
        self._last_attempt = now
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            self._sock = None
            raise UplinkUnavailable(f"cannot reach {self.address}: {exc}") from exc

    def send(self, msg: PoseMessage) -> bool:
        frame = encode_pose(msg)
        try:
            if self._sock is None:
                self._connect()
            self._sock.sendall(frame)
        except UplinkUnavailable as exc:
            self.dropped += 1
            log.debug("%s", exc)
            return False
        except OSError as exc:
            log.warning("uplink to %s failed: %s", self.address, exc)
            self.close()
            self.dropped += 1
            return False
        self.sent += 1
        return True

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
