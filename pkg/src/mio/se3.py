"""Rigid-body pose algebra on unit quaternions + translations.

Quaternions are stored scalar-first ``(w, x, y, z)`` and kept in the
canonical hemisphere ``w >= 0``. Euler angles follow the intrinsic Z-Y-X
(yaw, pitch, roll) convention, i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GimbalLock, NonMonotonicTimestamps

GIMBAL_EPS = 1e-6
CSV_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def _canonical(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError(f"invalid quaternion {q!r}")
    q = q / n
    # w == 0 leaves both signs in the hemisphere; break the tie on the first nonzero entry
    for c in q:
        if c != 0.0:
            if c < 0.0:
                q = -q
            break
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return np.array([math.cos(angle / 2.0), *(s * axis)])


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Unit quaternion for the rotation vector ``rv`` (axis * angle)."""
    rv = np.asarray(rv, dtype=float)
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        return _canonical(np.array([1.0, *(0.5 * rv)]))
    return np.array([math.cos(theta / 2.0), *(math.sin(theta / 2.0) / theta * rv)])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = _canonical(q)
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        return 2.0 * v
    return 2.0 * math.atan2(s, q[0]) / s * v


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform mapping body-frame points into the parent frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = _canonical(self.rotation)
        t = np.array(self.translation, dtype=float).reshape(3)
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> PoseSE3:
        return cls(_quat_from_matrix(np.asarray(T)[:3, :3]), np.asarray(T)[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> PoseSE3:
        return cls(quat_from_axis_angle((0.0, 0.0, 1.0), yaw), translation)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self.translation
        return T

    def allclose(self, other: PoseSE3, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __matmul__(self, other: PoseSE3) -> PoseSE3:
        return compose(self, other)

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"PoseSE3(q=({q}), t=({t}))"


@dataclass(frozen=True)
class SixDof:
    """Translation (m) plus Z-Y-X euler angles (roll, pitch, yaw) in radians."""

    translation: tuple
    euler: tuple

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "euler", tuple(float(v) for v in self.euler))
        if len(self.translation) != 3 or len(self.euler) != 3:
            raise ValueError("SixDof needs 3 translation and 3 euler components")

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> SixDof:
        v = [float(x) for x in v]
        return cls(v[:3], v[3:6])

    def as_vector(self) -> np.ndarray:
        return np.array([*self.translation, *self.euler])


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Apply ``b`` in the frame of ``a``: ``T_a @ T_b``."""
    t = a.rotation_matrix() @ b.translation + a.translation
    return PoseSE3(quat_mul(a.rotation, b.rotation), t)


def invert(p: PoseSE3) -> PoseSE3:
    q = p.rotation * np.array([1.0, -1.0, -1.0, -1.0])
    return PoseSE3(q, -(quat_to_matrix(q) @ p.translation))


def transform_point(p: PoseSE3, x) -> np.ndarray:
    return p.rotation_matrix() @ np.asarray(x, dtype=float) + p.translation


def transform_points(p: PoseSE3, xs: np.ndarray) -> np.ndarray:
    """Vectorised ``transform_point`` over an (N, 3) array."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 3)
    return xs @ p.rotation_matrix().T + p.translation


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array([
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    ])


def pose_from_6dof(d: SixDof) -> PoseSE3:
    roll, pitch, yaw = d.euler
    return PoseSE3(quat_from_euler(roll, pitch, yaw), d.translation)


def sixdof_from_pose(p: PoseSE3) -> SixDof:
    w, x, y, z = p.rotation
    # -R[2, 0] = sin(pitch); atan2 against the first column's norm stays accurate near +-pi/2
    sp = 2.0 * (w * y - x * z)
    cp = math.hypot(1 - 2 * (y * y + z * z), 2 * (x * y + w * z))
    pitch = math.atan2(sp, cp)
    if abs(abs(pitch) - math.pi / 2) < GIMBAL_EPS:
        raise GimbalLock(f"pitch {pitch!r} is within {GIMBAL_EPS} rad of +-pi/2")
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    euler = [float(wrap_angle(a)) for a in (roll, pitch, yaw)]
    return SixDof(tuple(p.translation), tuple(euler))


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal term for stability
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return np.array(q)


def rotation_angle(p: PoseSE3) -> float:
    """Angle (rad, in [0, pi]) of the rotation part of ``p``."""
    w = p.rotation[0]
    return 2.0 * math.atan2(float(np.linalg.norm(p.rotation[1:])), abs(w))


def yaw_of(p: PoseSE3) -> float:
    w, x, y, z = p.rotation
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


class Trajectory:
    """Time-ordered sequence of poses."""

    def __init__(self, times: Iterable[float], poses: Iterable[PoseSE3]):
        self.times = np.asarray(list(times), dtype=float)
        self.poses = list(poses)
        if len(self.times) != len(self.poses):
            raise ValueError("times and poses differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise NonMonotonicTimestamps("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, k):
        return self.times[k], self.poses[k]

    def __iter__(self):
        return iter(zip(self.times, self.poses))

    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.translation for p in self.poses])

    def quaternions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 4))
        return np.array([p.rotation for p in self.poses])

    def transformed(self, T: PoseSE3) -> Trajectory:
        """Left-multiply every pose by ``T``."""
        return Trajectory(self.times, [compose(T, p) for p in self.poses])

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)

    @classmethod
    def from_csv(cls, path) -> Trajectory:
        return read_trajectory_csv(path)


def accumulate(origin: PoseSE3, rel_motions, t0: float = 0.0) -> Trajectory:
    """Chain per-frame relative motions onto ``origin``.

    ``rel_motions`` is a sequence of ``(timestamp, PoseSE3)``, each motion
    expressed in the body frame of the preceding pose. The result holds the
    origin stamped at ``t0`` followed by one pose per motion.
    """
    rel_motions = list(rel_motions)
    times = [float(t0)] + [float(t) for t, _ in rel_motions]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise NonMonotonicTimestamps("relative motion timestamps must be strictly increasing")
    poses = [origin]
    for _, m in rel_motions:
        poses.append(compose(poses[-1], m))
    return Trajectory(times, poses)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, p in traj:
            w.writerow([_fmt(t), *map(_fmt, p.translation), *map(_fmt, p.rotation)])


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    times, poses = [], []
    for row in rows[1:]:
        if not row:
            continue
        v = [float(x) for x in row]
        times.append(v[0])
        poses.append(PoseSE3(np.array(v[4:8]), v[1:4]))
    return Trajectory(times, poses)
