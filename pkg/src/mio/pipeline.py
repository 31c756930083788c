"""Streaming runtime: ingest -> synchronize -> imaging -> inference -> accumulate -> uplink.

Each stage is a worker thread; stages are joined by bounded queues. In
real-time mode the source is paced by its timestamps and a full queue
drops its oldest radar frame (the frame's IMU samples are handed on to the
next frame, so no inertial data is lost). Offline mode blocks instead and
never drops.
"""

from __future__ import annotations

import collections
import heapq
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import se3
from .errors import CheckpointMismatch, NonMonotonicStream, SourceExhausted, UplinkUnavailable
from .imaging import ImagingConfig, PanoramicImage, overlay, project
from .model import ModelParams, infer_pair
from .se3 import PoseSE3, SixDof, Trajectory
from .wire import PoseMessage, UplinkClient, parse_address
from .world import ImuSample, RadarScan, Recording, load_sequence

log = logging.getLogger(__name__)

STAGES = ("ingest", "imaging", "inference", "uplink")
UPLINK_ENV = "MIO_UPLINK_ADDR"


@dataclass(frozen=True)
class SyncedFrame:
    frame_index: int
    scans: tuple          # overlay window ending at this frame
    prev_scans: tuple     # overlay window ending at the previous frame
    imu_window: tuple     # samples with t_prev < t <= t_curr
    t_prev: float
    t_curr: float

    @property
    def imu_gap(self) -> bool:
        return len(self.imu_window) == 0

    def absorb(self, older: SyncedFrame) -> SyncedFrame:
        """Take over a dropped predecessor's interval and IMU samples."""
        return replace(self, prev_scans=older.prev_scans, imu_window=older.imu_window + self.imu_window,
                       t_prev=older.t_prev)


class Synchronizer:
    """Pairs each radar frame with the IMU samples since the previous one.

    The two streams may arrive interleaved in any order; a frame is emitted
    once an IMU sample newer than it has been seen (or the IMU stream is
    closed), so its window ``(t_prev, t_curr]`` is complete.
    """

    def __init__(self, overlay_depth: int = 3):
        self.overlay_depth = overlay_depth
        self._history: collections.deque = collections.deque(maxlen=overlay_depth + 1)
        self._pending: collections.deque = collections.deque()
        self._imu: collections.deque = collections.deque()
        self._last_radar_t: float | None = None
        self._last_imu_t: float | None = None
        self._emitted_t: float | None = None
        self._imu_closed = False
        self._count = 0

    def push_radar(self, scan: RadarScan) -> list:
        if self._last_radar_t is not None and scan.timestamp <= self._last_radar_t:
            raise NonMonotonicStream(f"radar stamp {scan.timestamp} after {self._last_radar_t}")
        self._last_radar_t = scan.timestamp
        self._history.append(scan)
        hist = list(self._history)
        curr = tuple(hist[-self.overlay_depth:])
        prev = tuple(hist[:-1][-self.overlay_depth:])
        if self._count == 0 and not self._pending and self._emitted_t is None:
            # first frame only anchors the next interval
            self._emitted_t = scan.timestamp
            self._count = 1
            return []
        self._pending.append((self._count, curr, prev, scan.timestamp))
        self._count += 1
        return self._drain()

    def push_imu(self, sample: ImuSample) -> list:
        if self._last_imu_t is not None and sample.timestamp <= self._last_imu_t:
            raise NonMonotonicStream(f"IMU stamp {sample.timestamp} after {self._last_imu_t}")
        self._last_imu_t = sample.timestamp
        self._imu.append(sample)
        return self._drain()

    def close_imu(self) -> list:
        self._imu_closed = True
        return self._drain()

    def close(self) -> list:
        return self.close_imu()

    def _drain(self) -> list:
        out = []
        while self._pending:
            idx, curr, prev, t = self._pending[0]
            ready = self._imu_closed or (self._last_imu_t is not None and self._last_imu_t > t)
            if not ready:
                break
            self._pending.popleft()
            t_prev = self._emitted_t
            # samples at or before the previous frame belong to no window
            while self._imu and self._imu[0].timestamp <= t_prev:
                self._imu.popleft()
            window = []
            while self._imu and self._imu[0].timestamp <= t:
                window.append(self._imu.popleft())
            out.append(SyncedFrame(idx, curr, prev, tuple(window), t_prev, t))
            self._emitted_t = t
        return out


def synchronize(radar: Iterable[RadarScan], imu: Iterable[ImuSample], overlay_depth: int = 3):
    """Yield ``SyncedFrame`` objects for two timestamp-ordered streams."""
    sync = Synchronizer(overlay_depth)
    events = heapq.merge(((s.timestamp, 0, i, s) for i, s in enumerate(imu)),
                         ((s.timestamp, 1, i, s) for i, s in enumerate(radar)))
    for _, kind, _, item in events:
        yield from (sync.push_imu(item) if kind == 0 else sync.push_radar(item))
    yield from sync.close()


# --- queues -----------------------------------------------------------------

_END = object()


class FrameQueue:
    """Bounded FIFO. With ``drop_oldest`` a full queue evicts its oldest droppable item.

    ``merge(dropped, successor)`` lets the successor inherit from the evicted
    item; it is applied to the next item in the queue or the incoming one.
    """

    def __init__(self, capacity: int, drop_oldest: bool = False,
                 droppable: Callable = lambda item: True, merge: Callable | None = None):
        self.capacity = capacity
        self.drop_oldest = drop_oldest
        self.droppable = droppable
        self.merge = merge
        self.dropped = 0
        self.max_occupancy = 0
        self._items: collections.deque = collections.deque()
        self._cv = threading.Condition()
        self._aborted = False

    def put(self, item) -> None:
        with self._cv:
            while len(self._items) >= self.capacity and not self._aborted:
                if self.drop_oldest and item is not _END and self._evict(item):
                    continue
                self._cv.wait(0.05)
            if item is not _END and self._pending_merge is not None:
                item = self.merge(self._pending_merge, item)
                self._pending_merge = None
            self._items.append(item)
            self.max_occupancy = max(self.max_occupancy, len(self._items))
            self._cv.notify_all()

    _pending_merge = None

    def _evict(self, incoming) -> bool:
        for i, old in enumerate(self._items):
            if old is _END or not self.droppable(old):
                continue
            del self._items[i]
            self.dropped += 1
            if self.merge is not None:
                if i < len(self._items):
                    self._items[i] = self.merge(old, self._items[i])
                elif self._pending_merge is None:
                    self._pending_merge = old
                else:
                    self._pending_merge = self.merge(self._pending_merge, old)
            return True
        return False

    def get(self):
        with self._cv:
            while not self._items and not self._aborted:
                self._cv.wait(0.05)
            if self._aborted:
                return _END
            item = self._items.popleft()
            self._cv.notify_all()
            return item

    def abort(self) -> None:
        with self._cv:
            self._aborted = True
            self._cv.notify_all()

    def __len__(self) -> int:
        with self._cv:
            return len(self._items)


# --- pipeline ---------------------------------------------------------------

@dataclass
class PipelineConfig:
    realtime: bool = False
    time_scale: float = 1.0          # source seconds per wall second in real-time mode
    queue_capacity: int = 4
    inference_delay: float = 0.0     # extra wall seconds per inference, for load tests
    uplink: str | None = None        # host:port
    uplink_retry: float = 1.0
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    origin: PoseSE3 = field(default_factory=PoseSE3.identity)


@dataclass(frozen=True)
class ImagedFrame:
    frame_index: int
    t_prev: float
    t_curr: float
    prev_image: PanoramicImage
    curr_image: PanoramicImage
    imu_window: tuple

    def absorb(self, older: ImagedFrame) -> ImagedFrame:
        return replace(self, t_prev=older.t_prev, prev_image=older.prev_image,
                       imu_window=older.imu_window + self.imu_window)


class _Latency:
    def __init__(self):
        self.samples = collections.defaultdict(list)
        self._lock = threading.Lock()

    def add(self, stage: str, seconds: float) -> None:
        with self._lock:
            self.samples[stage].append(seconds)

    def summary(self) -> dict:
        out = {}
        for stage in STAGES:
            s = np.array(self.samples.get(stage, []))
            out[f"latency_{stage}_mean_s"] = float(s.mean()) if len(s) else 0.0
            out[f"latency_{stage}_p95_s"] = float(np.percentile(s, 95)) if len(s) else 0.0
        return out


@dataclass
class PipelineStats:
    processed: int = 0
    dropped: int = 0
    offered: int = 0
    fps: float = 0.0
    wall_time_s: float = 0.0
    latency: dict = field(default_factory=dict)
    max_queue_occupancy: dict = field(default_factory=dict)
    queue_capacity: int = 0
    imu_gap_frames: int = 0
    uplink_sent: int = 0
    uplink_dropped: int = 0

    def to_dict(self) -> dict:
        d = {"processed": self.processed, "dropped": self.dropped, "fps": self.fps}
        d.update(self.latency)
        d.update({"offered": self.offered, "wall_time_s": self.wall_time_s,
                  "queue_capacity": self.queue_capacity, "max_queue_occupancy": self.max_queue_occupancy,
                  "imu_gap_frames": self.imu_gap_frames, "uplink_sent": self.uplink_sent,
                  "uplink_dropped": self.uplink_dropped})
        return d

    def write_json(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class PipelineResult:
    trajectory: Trajectory
    stats: PipelineStats
    motions: list  # (t, SixDof)


class RecordingSource:
    """Replays a recording's radar and IMU streams in timestamp order."""

    def __init__(self, rec: Recording):
        self.rec = rec
        merged = heapq.merge(((s.timestamp, 0, i) for i, s in enumerate(rec.imu)),
                             ((s.timestamp, 1, i) for i, s in enumerate(rec.scans)))
        self._events = iter(merged)

    @classmethod
    def open(cls, source) -> RecordingSource:
        if isinstance(source, RecordingSource):
            return source
        if isinstance(source, Recording):
            return cls(source)
        return cls(load_sequence(source))

    def next_event(self):
        """``("imu", ImuSample)`` or ``("radar", RadarScan)``; raises SourceExhausted at the end."""
        try:
            t, kind, i = next(self._events)
        except StopIteration:
            raise SourceExhausted() from None
        return ("imu", self.rec.imu[i]) if kind == 0 else ("radar", self.rec.scans[i])


def _uplink_address(cfg: PipelineConfig):
    addr = os.environ.get(UPLINK_ENV) or cfg.uplink
    return parse_address(addr) if addr else None


def run_pipeline(source, params: ModelParams, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Run the streaming pipeline to the end of ``source`` (Recording, RecordingSource or path)."""
    mc = params.config
    if (mc.height, mc.width) != (cfg.imaging.height, cfg.imaging.width):
        raise CheckpointMismatch(
            f"model expects {mc.height}x{mc.width} images, imaging produces "
            f"{cfg.imaging.height}x{cfg.imaging.width}")
    src = RecordingSource.open(source)
    cap = cfg.queue_capacity
    rt = cfg.realtime
    q_ingest = FrameQueue(cap, rt, droppable=lambda ev: ev[0] == "radar")
    q_sync = FrameQueue(cap, rt, merge=lambda old, new: new.absorb(old))
    q_image = FrameQueue(cap, rt, merge=lambda old, new: new.absorb(old))
    q_pose = FrameQueue(cap)
    q_uplink = FrameQueue(cap, rt)
    queues = {"ingest": q_ingest, "sync": q_sync, "imaging": q_image, "accumulate": q_pose, "uplink": q_uplink}
    lat = _Latency()
    errors: list = []
    counters = {"radar": 0, "gaps": 0, "processed": 0}
    motions: list = []
    t_first: list = []
    address = _uplink_address(cfg)

    def guarded(fn, downstream):
        def run():
            try:
                fn()
            except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
                errors.append(exc)
                for q in queues.values():
                    q.abort()
            finally:
                if downstream is not None:
                    downstream.put(_END)
        return run

    def ingest():
        wall0 = time.perf_counter()
        t0 = None
        while True:
            try:
                kind, item = src.next_event()
            except SourceExhausted:
                return
            if rt:
                t0 = item.timestamp if t0 is None else t0
                delay = wall0 + (item.timestamp - t0) / cfg.time_scale - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            start = time.perf_counter()
            q_ingest.put((kind, item))
            if kind == "radar":
                counters["radar"] += 1
                lat.add("ingest", time.perf_counter() - start)

    def sync_stage():
        sync = Synchronizer(cfg.imaging.overlay_depth)
        while True:
            ev = q_ingest.get()
            if ev is _END:
                break
            kind, item = ev
            if kind == "radar" and not t_first:
                t_first.append(item.timestamp)
            for f in (sync.push_radar(item) if kind == "radar" else sync.push_imu(item)):
                q_sync.put(f)
        for f in sync.close():
            q_sync.put(f)

    def imaging_stage():
        last = None  # (t, image) of the most recent frame
        while True:
            f = q_sync.get()
            if f is _END:
                return
            start = time.perf_counter()
            if last is not None and last[0] == f.t_prev:
                prev_img = last[1]
            else:
                prev_img = project(overlay(list(f.prev_scans), cfg.imaging), cfg.imaging)
            curr_img = project(overlay(list(f.scans), cfg.imaging), cfg.imaging)
            last = (f.t_curr, curr_img)
            lat.add("imaging", time.perf_counter() - start)
            q_image.put(ImagedFrame(f.frame_index, f.t_prev, f.t_curr, prev_img, curr_img, f.imu_window))

    def inference_stage():
        hidden = None
        while True:
            f = q_image.get()
            if f is _END:
                return
            start = time.perf_counter()
            if not f.imu_window:
                counters["gaps"] += 1
            motion, hidden = infer_pair(f.prev_image, f.curr_image, list(f.imu_window), hidden, params)
            if cfg.inference_delay > 0:
                time.sleep(cfg.inference_delay)
            lat.add("inference", time.perf_counter() - start)
            counters["processed"] += 1
            q_pose.put((f.t_curr, motion))

    def accumulate_stage():
        pose = cfg.origin
        seq = 0
        while True:
            item = q_pose.get()
            if item is _END:
                return
            t, motion = item
            motions.append((t, motion))
            pose = se3.compose(pose, se3.pose_from_6dof(motion))
            if address is not None:
                q_uplink.put(PoseMessage.from_pose(seq, t, pose))
            seq += 1

    uplink_client = UplinkClient(address, cfg.uplink_retry) if address is not None else None

    def uplink_stage():
        while True:
            msg = q_uplink.get()
            if msg is _END:
                break
            start = time.perf_counter()
            uplink_client.send(msg)
            lat.add("uplink", time.perf_counter() - start)
        uplink_client.close()

    workers = [
        ("ingest", ingest, q_ingest),
        ("sync", sync_stage, q_sync),
        ("imaging", imaging_stage, q_image),
        ("inference", inference_stage, q_pose),
        ("accumulate", accumulate_stage, q_uplink if uplink_client else None),
    ]
    if uplink_client is not None:
        workers.append(("uplink", uplink_stage, None))
    threads = [threading.Thread(target=guarded(fn, down), name=f"mio-{name}", daemon=True)
               for name, fn, down in workers]
    wall0 = time.perf_counter()
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    wall = time.perf_counter() - wall0
    if errors:
        raise errors[0]

    t0 = t_first[0] if t_first else 0.0
    rel = [(t, se3.pose_from_6dof(m)) for t, m in motions]
    trajectory = se3.accumulate(cfg.origin, rel, t0=t0)
    dropped = q_ingest.dropped + q_sync.dropped + q_image.dropped
    stats = PipelineStats(
        processed=counters["processed"],
        dropped=dropped,
        offered=max(0, counters["radar"] - 1),
        fps=counters["processed"] / wall if wall > 0 else 0.0,
        wall_time_s=wall,
        latency=lat.summary(),
        max_queue_occupancy={k: q.max_occupancy for k, q in queues.items()},
        queue_capacity=cap,
        imu_gap_frames=counters["gaps"],
        uplink_sent=uplink_client.sent if uplink_client else 0,
        uplink_dropped=(uplink_client.dropped + q_uplink.dropped) if uplink_client else 0,
    )
    if uplink_client is not None and uplink_client.sent == 0:
        log.warning("%s", UplinkUnavailable(f"no poses reached {address}"))
    return PipelineResult(trajectory, stats, motions)
