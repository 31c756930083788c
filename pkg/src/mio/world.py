"""Floorplan world, scripted walks and simulated radar / IMU sensors.

The world is 2.5D: vertical rectangular walls standing on a flat floor.
Radar returns are produced at point-cloud level by casting a fixed grid of
rays from the sensor; IMU samples come from finite differences of the dense
ground-truth trajectory plus bias and white noise.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import se3
from .errors import (
    PathCrossesWall,
    PoseOutsideBounds,
    TrajectoryTooShort,
    WaypointOutsideBounds,
)
from .se3 import PoseSE3, Trajectory

GRAVITY = 9.81
# world-frame gravity vector, z up
GRAVITY_WORLD = np.array([0.0, 0.0, -GRAVITY])


@dataclass(frozen=True)
class Wall:
    x1: float
    y1: float
    x2: float
    y2: float
    height: float = 2.5

    @property
    def length(self) -> float:
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)


@dataclass
class Floorplan:
    walls: list
    bounds: tuple  # (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        self.walls = [w if isinstance(w, Wall) else Wall(*w) for w in self.walls]
        self.bounds = tuple(float(b) for b in self.bounds)
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"degenerate bounds {self.bounds}")
        eps = 1e-9
        for w in self.walls:
            if w.length <= 0:
                raise ValueError(f"zero-length wall {w}")
            for x, y in ((w.x1, w.y1), (w.x2, w.y2)):
                if not (xmin - eps <= x <= xmax + eps and ymin - eps <= y <= ymax + eps):
                    raise ValueError(f"wall {w} leaves the bounds")

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def segment_crosses_wall(self, p, q) -> bool:
        return any(_segments_intersect(p, q, (w.x1, w.y1), (w.x2, w.y2)) for w in self.walls)

    def clearance(self, p, q) -> float:
        """Smallest distance between segment p-q and any wall."""
        if not self.walls:
            return math.inf
        return min(_segment_distance(p, q, (w.x1, w.y1), (w.x2, w.y2)) for w in self.walls)

    def wall_array(self) -> np.ndarray:
        return np.array([[w.x1, w.y1, w.x2, w.y2, w.height] for w in self.walls], dtype=float)

    def to_dict(self) -> dict:
        return {"walls": [asdict(w) for w in self.walls], "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, d: dict) -> Floorplan:
        return cls([Wall(**w) for w in d["walls"]], tuple(d["bounds"]))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, q, r) -> bool:
    return min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12 and \
        min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    # touching / collinear cases count as crossing
    if d1 == 0 and _on_segment(p3, p4, p1):
        return True
    if d2 == 0 and _on_segment(p3, p4, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, p3):
        return True
    if d4 == 0 and _on_segment(p1, p2, p4):
        return True
    return False


def _point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    u = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + u * ab)))


def _segment_distance(p1, p2, p3, p4) -> float:
    if _segments_intersect(p1, p2, p3, p4):
        return 0.0
    return min(
        _point_segment_distance(p1, p3, p4),
        _point_segment_distance(p2, p3, p4),
        _point_segment_distance(p3, p1, p2),
        _point_segment_distance(p4, p1, p2),
    )


def two_bed_apartment() -> Floorplan:
    """10 x 7 m flat: two bedrooms on top, living room and kitchen below."""
    walls = [
        # shell
        Wall(0, 0, 10, 0), Wall(10, 0, 10, 7), Wall(10, 7, 0, 7), Wall(0, 7, 0, 0),
        # corridor wall with two bedroom doors
        Wall(0, 4, 1.5, 4), Wall(2.5, 4, 5.5, 4), Wall(6.3, 4, 10, 4),
        # bedroom partition
        Wall(5, 4, 5, 7),
        # living room / kitchen partition with a door
        Wall(6.5, 0, 6.5, 1.5), Wall(6.5, 2.5, 6.5, 4),
        # furniture-height clutter
        Wall(2.0, 5.8, 3.2, 5.8, 0.6), Wall(8.0, 1.0, 9.0, 1.0, 0.9),
    ]
    return Floorplan(walls, (0.0, 0.0, 10.0, 7.0))


# navigation nodes of the default apartment used by the scripted search walks
APARTMENT_NODES = {
    "living_a": (1.2, 1.2), "living_b": (5.3, 1.2), "living_c": (5.3, 3.0), "living_d": (1.2, 3.0),
    "door_bed1": (2.0, 4.0), "door_bed2": (5.9, 4.0), "door_kitchen": (6.5, 2.0),
    "bed1_a": (1.0, 5.0), "bed1_b": (4.0, 5.0), "bed1_c": (4.0, 6.3), "bed1_d": (1.0, 6.3),
    "bed2_a": (6.0, 5.0), "bed2_b": (9.0, 5.0), "bed2_c": (9.0, 6.3), "bed2_d": (6.0, 6.3),
    "kitchen_a": (7.5, 2.0), "kitchen_b": (9.2, 2.0), "kitchen_c": (9.2, 3.3), "kitchen_d": (7.5, 3.3),
}


@dataclass
class MotionScript:
    """Waypoints ``(time_s, x, y, yaw_rad)``; yaw is interpolated unwrapped."""

    waypoints: list
    imu_rate: float = 100.0
    radar_rate: float = 10.0
    height: float = 1.2

    def __post_init__(self):
        self.waypoints = [tuple(float(v) for v in w) for w in self.waypoints]
        if self.imu_rate <= 0 or self.radar_rate <= 0:
            raise ValueError("rates must be positive")
        if self.radar_rate > self.imu_rate:
            raise ValueError("radar_rate must not exceed imu_rate")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    @property
    def duration(self) -> float:
        if not self.waypoints:
            return 0.0
        return self.waypoints[-1][0] - self.waypoints[0][0]

    def state_at(self, t):
        """Interpolated (x, y, yaw) at time(s) ``t``."""
        w = np.array(self.waypoints)
        return np.interp(t, w[:, 0], w[:, 1]), np.interp(t, w[:, 0], w[:, 2]), np.interp(t, w[:, 0], w[:, 3])

    def pose_at(self, t: float) -> PoseSE3:
        x, y, yaw = self.state_at(t)
        return PoseSE3.from_yaw(float(yaw), (float(x), float(y), self.height))

    def to_dict(self) -> dict:
        return {"waypoints": [list(w) for w in self.waypoints], "imu_rate": self.imu_rate,
                "radar_rate": self.radar_rate, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> MotionScript:
        return cls(**d)


def script_from_path(points: Sequence, speed: float = 0.8, turn_rate: float = 1.5,
                     start_yaw: float | None = None, pause: float = 0.0, **kw) -> MotionScript:
    """Walk through ``points``: turn in place towards the next point, then walk straight."""
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    yaw = start_yaw if start_yaw is not None else math.atan2(pts[1][1] - pts[0][1], pts[1][0] - pts[0][0])
    t = 0.0
    wps = [(t, pts[0][0], pts[0][1], yaw)]
    if pause > 0:
        t += pause
        wps.append((t, pts[0][0], pts[0][1], yaw))
    for a, b in zip(pts, pts[1:]):
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        dyaw = float(se3.wrap_angle(heading - yaw))
        if abs(dyaw) > 1e-9:
            yaw += dyaw
            t += abs(dyaw) / turn_rate
            wps.append((t, a[0], a[1], yaw))
        dist = math.hypot(b[0] - a[0], b[1] - a[1])
        if dist > 0:
            t += dist / speed
            wps.append((t, b[0], b[1], yaw))
    return MotionScript(wps, **kw)


def search_script(duration: float = 60.0, **kw) -> MotionScript:
    """Default held-out walk: a room-by-room search of the apartment, cut to ``duration``."""
    n = APARTMENT_NODES
    route = ["living_a", "living_b", "door_kitchen", "kitchen_a", "kitchen_b", "kitchen_c",
             "kitchen_d", "door_kitchen", "living_c", "door_bed2", "bed2_a", "bed2_d", "bed2_c",
             "bed2_b", "door_bed2", "living_c", "living_d", "door_bed1", "bed1_a", "bed1_d",
             "bed1_c", "bed1_b", "door_bed1", "living_d", "living_a"]
    script = script_from_path([n[r] for r in route], speed=kw.pop("speed", 0.7), **kw)
    return truncate_script(script, duration)


def truncate_script(script: MotionScript, duration: float) -> MotionScript:
    """Cut (or hold the last pose to extend) a script to exactly ``duration`` seconds."""
    t0 = script.waypoints[0][0]
    t_end = t0 + duration
    kept = [w for w in script.waypoints if w[0] < t_end]
    x, y, yaw = script.state_at(t_end)
    kept.append((t_end, float(x), float(y), float(yaw)))
    return MotionScript(kept, script.imu_rate, script.radar_rate, script.height)


def _visibility_graph(plan: Floorplan, nodes: dict, margin: float) -> dict:
    names = sorted(nodes)
    graph = {k: [] for k in names}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            pa, pb = nodes[a], nodes[b]
            if not plan.segment_crosses_wall(pa, pb) and plan.clearance(pa, pb) >= margin:
                graph[a].append(b)
                graph[b].append(a)
    return graph


def random_walk_script(plan: Floorplan, duration: float, seed: int,
                       nodes: dict | None = None, margin: float = 0.3,
                       jitter: float = 0.35, **kw) -> MotionScript:
    """Seeded random search walk over the navigation nodes of ``plan``.

    Speed and turn rate are drawn per leg so the training scripts cover a
    range of motion magnitudes.
    """
    nodes = nodes or APARTMENT_NODES
    rng = np.random.default_rng([seed, 7])
    graph = _visibility_graph(plan, nodes, margin)
    names = sorted(n for n in graph if graph[n])
    cur = names[rng.integers(len(names))]
    pos = nodes[cur]
    yaw = float(rng.uniform(-math.pi, math.pi))
    t = 0.0
    wps = [(t, pos[0], pos[1], yaw)]
    prev = None
    while t < duration:
        options = [n for n in graph[cur] if n != prev] or graph[cur]
        nxt = options[rng.integers(len(options))]
        for _ in range(20):
            target = np.array(nodes[nxt]) + rng.uniform(-jitter, jitter, size=2)
            if plan.contains(*target) and not plan.segment_crosses_wall(pos, target) \
                    and plan.clearance(pos, target) >= margin:
                break
        else:
            target = np.array(nodes[nxt])
        speed = float(rng.uniform(0.4, 1.1))
        turn_rate = float(rng.uniform(0.8, 2.0))
        heading = math.atan2(target[1] - pos[1], target[0] - pos[0])
        dyaw = float(se3.wrap_angle(heading - yaw))
        if abs(dyaw) > 1e-9:
            yaw += dyaw
            t += abs(dyaw) / turn_rate
            wps.append((t, pos[0], pos[1], yaw))
        dist = float(np.hypot(*(target - np.asarray(pos))))
        if dist > 1e-6:
            t += dist / speed
            wps.append((t, float(target[0]), float(target[1]), yaw))
        if rng.random() < 0.15:
            t += float(rng.uniform(0.3, 1.5))
            wps.append((t, float(target[0]), float(target[1]), yaw))
        pos = (float(target[0]), float(target[1]))
        prev, cur = cur, nxt
    return truncate_script(MotionScript(wps, **kw), duration)


def sample_times(t0: float, t1: float, rate: float, inclusive: bool = True) -> np.ndarray:
    """Stamps ``t0 + k / rate``; integer division keeps stamps of commensurate rates identical."""
    n = (t1 - t0) * rate
    count = int(math.floor(n + 1e-9)) + 1 if inclusive else int(math.ceil(n - 1e-9))
    return t0 + np.arange(count) / rate


def generate_trajectory(script: MotionScript, plan: Floorplan) -> Trajectory:
    """Dense ground truth at ``imu_rate``: piecewise-linear position and yaw, level attitude."""
    if not script.waypoints:
        raise TrajectoryTooShort("motion script has no waypoints")
    for t, x, y, _ in script.waypoints:
        if not plan.contains(x, y):
            raise WaypointOutsideBounds(f"waypoint at t={t} ({x}, {y}) is outside {plan.bounds}")
    for a, b in zip(script.waypoints, script.waypoints[1:]):
        if (a[1], a[2]) != (b[1], b[2]) and plan.segment_crosses_wall(a[1:3], b[1:3]):
            raise PathCrossesWall(f"leg {a[1:3]} -> {b[1:3]} crosses a wall")
    t0, t1 = script.waypoints[0][0], script.waypoints[-1][0]
    times = sample_times(t0, t1, script.imu_rate)
    xs, ys, yaws = script.state_at(times)
    poses = [PoseSE3.from_yaw(float(yw), (float(x), float(y), script.height))
             for x, y, yw in zip(xs, ys, yaws)]
    return Trajectory(times, poses)


@dataclass
class SensorNoiseConfig:
    range_sigma: float = 0.05
    angle_sigma: float = math.radians(1.0)
    detection_prob: float = 0.78
    ghost_rate: float = 5.0
    gyro_sigma: float = 0.001
    accel_sigma: float = 0.01
    gyro_bias: tuple = (0.01, 0.01, 0.01)
    accel_bias: tuple = (0.1, 0.1, 0.1)
    rng_seed: int = 0
    # radar geometry
    azimuth_fov: float = math.radians(120.0)
    elevation_fov: float = math.radians(30.0)
    max_range: float = 8.0
    n_azimuth: int = 32
    n_elevation: int = 4
    point_cap: int = 256

    def __post_init__(self):
        self.gyro_bias = _vec3(self.gyro_bias)
        self.accel_bias = _vec3(self.accel_bias)
        for name in ("range_sigma", "angle_sigma", "gyro_sigma", "accel_sigma", "ghost_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ValueError("detection_prob must lie in [0, 1]")
        if self.max_range <= 0 or self.azimuth_fov <= 0 or self.elevation_fov <= 0:
            raise ValueError("radar geometry must be positive")

    @classmethod
    def noiseless(cls, **kw) -> SensorNoiseConfig:
        base = dict(range_sigma=0.0, angle_sigma=0.0, detection_prob=1.0, ghost_rate=0.0,
                    gyro_sigma=0.0, accel_sigma=0.0, gyro_bias=(0, 0, 0), accel_bias=(0, 0, 0))
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gyro_bias"] = list(self.gyro_bias)
        d["accel_bias"] = list(self.accel_bias)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SensorNoiseConfig:
        return cls(**d)


def _vec3(v) -> tuple:
    if np.isscalar(v):
        v = (v, v, v)
    v = tuple(float(x) for x in v)
    if len(v) != 3:
        raise ValueError("expected a 3-vector")
    return v


@dataclass
class RadarScan:
    """Points in the sensor frame; columns x, y, z, intensity."""

    timestamp: float
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.timestamp = float(self.timestamp)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 4)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ImuSample:
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.timestamp = float(self.timestamp)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(3)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])


def imu_arrays(samples: Sequence[ImuSample]):
    """(times, gyro (N,3), accel (N,3)) for a list of samples."""
    if not samples:
        return np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3))
    t = np.array([s.timestamp for s in samples])
    return t, np.array([s.gyro for s in samples]), np.array([s.accel for s in samples])


def _seed_for_time(t: float) -> int:
    k = int(round(t * 1e6))
    return 2 * k if k >= 0 else -2 * k + 1


def ray_directions(cfg: SensorNoiseConfig):
    """Cell-centred azimuth/elevation grid and the matching unit vectors (sensor frame)."""
    az = -cfg.azimuth_fov / 2 + (np.arange(cfg.n_azimuth) + 0.5) * cfg.azimuth_fov / cfg.n_azimuth
    el = -cfg.elevation_fov / 2 + (np.arange(cfg.n_elevation) + 0.5) * cfg.elevation_fov / cfg.n_elevation
    A, E = np.meshgrid(az, el)
    A, E = A.ravel(), E.ravel()
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=1)
    return A, E, dirs


def cast_rays(plan: Floorplan, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Range to the first wall hit along each unit ray (inf where nothing is hit)."""
    walls = plan.wall_array()
    if len(walls) == 0 or len(dirs) == 0:
        return np.full(len(dirs), np.inf)
    ox, oy, oz = origin
    ax, ay = walls[:, 0], walls[:, 1]
    ex, ey = walls[:, 2] - ax, walls[:, 3] - ay
    dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    # solve o + s*d = a + u*e in the xy plane (rays x walls)
    denom = dx * ey - dy * ex
    wx, wy = ax - ox, ay - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
        z = oz + s * dz
    hit = (np.abs(denom) > 1e-12) & (s > 1e-9) & (u >= 0) & (u <= 1) & (z >= 0) & (z <= walls[:, 4])
    s = np.where(hit, s, np.inf)
    return s.min(axis=1)


def radar_scan(plan: Floorplan, pose: PoseSE3, cfg: SensorNoiseConfig, t: float) -> RadarScan:
    """Simulated point cloud (sensor frame) seen from ``pose`` at time ``t``."""
    x, y = pose.translation[:2]
    if not plan.contains(x, y):
        raise PoseOutsideBounds(f"sensor at ({x}, {y}) is outside {plan.bounds}")
    rng = np.random.default_rng([cfg.rng_seed, 2, _seed_for_time(t)])
    az, el, dirs = ray_directions(cfg)
    world_dirs = dirs @ pose.rotation_matrix().T
    rng_hit = cast_rays(plan, pose.translation, world_dirs)
    keep = (rng_hit <= cfg.max_range) & (rng.random(len(rng_hit)) < cfg.detection_prob)
    r = rng_hit[keep]
    n = len(r)
    r_noise = np.clip(rng.normal(0.0, 1.0, n), -4.0, 4.0) * cfg.range_sigma
    r = np.maximum(r + r_noise, 0.0)
    a = az[keep] + rng.normal(0.0, 1.0, n) * cfg.angle_sigma
    e = el[keep] + rng.normal(0.0, 1.0, n) * cfg.angle_sigma

    n_ghost = rng.poisson(cfg.ghost_rate) if cfg.ghost_rate > 0 else 0
    ga = rng.uniform(-cfg.azimuth_fov / 2, cfg.azimuth_fov / 2, n_ghost)
    ge = rng.uniform(-cfg.elevation_fov / 2, cfg.elevation_fov / 2, n_ghost)
    gr = rng.uniform(0.0, cfg.max_range, n_ghost)

    r = np.concatenate([r, gr])
    a = np.concatenate([a, ga])
    e = np.concatenate([e, ge])
    pts = np.stack([r * np.cos(e) * np.cos(a), r * np.cos(e) * np.sin(a), r * np.sin(e),
                    np.clip(1.0 - r / cfg.max_range, 0.0, 1.0)], axis=1)
    if len(pts) > cfg.point_cap:
        pts = pts[np.sort(rng.choice(len(pts), cfg.point_cap, replace=False))]
    return RadarScan(t, pts)


def imu_stream(traj: Trajectory, cfg: SensorNoiseConfig) -> list:
    """Gyro and specific-force samples along a dense trajectory.

    Angular rate is the forward difference of orientation; acceleration is
    the second difference of position, with the device assumed at rest
    before the first and after the last sample.
    """
    n = len(traj)
    if n < 3:
        raise TrajectoryTooShort(f"need at least 3 trajectory samples, got {n}")
    times = traj.times
    dt = float(np.median(np.diff(times)))
    rate = 1.0 / dt
    P = traj.positions()
    Q = traj.quaternions()

    gyro = np.zeros((n, 3))
    for k in range(n - 1):
        dq = se3.quat_mul(Q[k] * np.array([1, -1, -1, -1]), Q[k + 1])
        gyro[k] = se3.quat_to_rotvec(dq) / dt
    gyro[-1] = gyro[-2]

    Pp = np.vstack([P[:1], P, P[-1:]])
    acc_world = (Pp[2:] - 2 * Pp[1:-1] + Pp[:-2]) / dt ** 2
    accel = np.empty((n, 3))
    for k in range(n):
        R = se3.quat_to_matrix(Q[k])
        accel[k] = R.T @ (acc_world[k] - GRAVITY_WORLD)

    rng = np.random.default_rng([cfg.rng_seed, 1])
    gyro = gyro + np.asarray(cfg.gyro_bias) + rng.normal(0.0, cfg.gyro_sigma * math.sqrt(rate), (n, 3))
    accel = accel + np.asarray(cfg.accel_bias) + rng.normal(0.0, cfg.accel_sigma * math.sqrt(rate), (n, 3))
    return [ImuSample(t, g, a) for t, g, a in zip(times, gyro, accel)]


@dataclass
class Recording:
    """In-memory recording: ground truth, radar scans and IMU samples."""

    meta: dict
    truth: Trajectory
    imu: list
    scans: list

    @property
    def radar_times(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.scans])

    def truth_at_radar(self) -> Trajectory:
        """Ground-truth poses at the radar frame stamps."""
        idx = np.searchsorted(self.truth.times, self.radar_times)
        idx = np.clip(idx, 0, len(self.truth) - 1)
        return Trajectory(self.radar_times, [self.truth.poses[i] for i in idx])


def _q9(a: np.ndarray) -> np.ndarray:
    """Round to the 9 significant digits used by the file format."""
    flat = np.asarray(a, dtype=float).ravel()
    return np.array([float(f"{v:.9g}") for v in flat]).reshape(np.shape(a))


def simulate_sequence(plan: Floorplan, script: MotionScript, cfg: SensorNoiseConfig) -> Recording:
    """Simulate a full recording; floats are rounded to their on-disk precision."""
    truth = generate_trajectory(script, plan)
    imu = imu_stream(truth, cfg)
    t0, t1 = script.waypoints[0][0], script.waypoints[-1][0]
    scans = []
    for t in sample_times(t0, t1, script.radar_rate, inclusive=False):
        scans.append(radar_scan(plan, script.pose_at(float(t)), cfg, float(t)))
    meta = {
        "imu_rate": script.imu_rate,
        "radar_rate": script.radar_rate,
        "sensor": cfg.to_dict(),
        "floorplan": plan.to_dict(),
        "script": script.to_dict(),
    }
    truth = Trajectory(_q9(truth.times), [PoseSE3(_q9(p.rotation), _q9(p.translation)) for p in truth.poses])
    imu = [ImuSample(*_q9(np.array([s.timestamp])), _q9(s.gyro), _q9(s.accel)) for s in imu]
    scans = [RadarScan(float(_q9(np.array([s.timestamp]))[0]), _q9(s.points)) for s in scans]
    return Recording(meta, truth, imu, scans)


def _fmt(v) -> str:
    return f"{v:.9g}"


def write_sequence(seq: Recording, path) -> Path:
    path = Path(path)
    (path / "radar").mkdir(parents=True, exist_ok=True)
    with (path / "meta.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(seq.meta, fh, indent=2)
        fh.write("\n")
    seq.truth.to_csv(path / "truth.csv")
    with (path / "imu.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "gx", "gy", "gz", "ax", "ay", "az"])
        for s in seq.imu:
            w.writerow([_fmt(s.timestamp), *map(_fmt, s.gyro), *map(_fmt, s.accel)])
    with (path / "radar" / "index.csv").open("w", encoding="utf-8", newline="") as idx:
        iw = csv.writer(idx, lineterminator="\n")
        iw.writerow(["frame", "t", "file"])
        for k, scan in enumerate(seq.scans):
            name = f"{k:06d}.csv"
            iw.writerow([k, _fmt(scan.timestamp), name])
            with (path / "radar" / name).open("w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "y", "z", "intensity"])
                for p in scan.points:
                    w.writerow(list(map(_fmt, p)))
    return path


def record_sequence(plan: Floorplan, script: MotionScript, cfg: SensorNoiseConfig, path) -> Recording:
    """Simulate and write a sequence directory; returns the in-memory copy."""
    seq = simulate_sequence(plan, script, cfg)
    write_sequence(seq, path)
    return seq


def _read_rows(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [r for r in rows[1:] if r]


def load_sequence(path) -> Recording:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    truth = se3.read_trajectory_csv(path / "truth.csv")
    _, rows = _read_rows(path / "imu.csv")
    imu = []
    for r in rows:
        v = [float(x) for x in r]
        imu.append(ImuSample(v[0], v[1:4], v[4:7]))
    _, index = _read_rows(path / "radar" / "index.csv")
    scans = []
    for frame, t, name in index:
        _, pts = _read_rows(path / "radar" / name)
        arr = np.array([[float(x) for x in p] for p in pts]) if pts else np.zeros((0, 4))
        scans.append(RadarScan(float(t), arr))
    return Recording(meta, truth, imu, scans)
