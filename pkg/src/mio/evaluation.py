"""Trajectory accuracy metrics, IMU dead-reckoning baseline and report writing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from . import se3
from .errors import EmptyTrajectory, NoTemporalOverlap, TrajectoryTooShort
from .se3 import PoseSE3, Trajectory
from .world import GRAVITY_WORLD, ImuSample, imu_arrays


@dataclass
class AteResult:
    rmse: float
    mean: float
    max: float
    errors: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mean": self.mean, "max": self.max}


@dataclass
class RpeResult:
    delta: int
    trans_mean: float
    trans_rmse: float
    trans_max: float
    rot_mean: float
    rot_rmse: float
    rot_max: float
    trans_errors: np.ndarray = field(repr=False)
    rot_errors: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "trans_mean": self.trans_mean, "trans_rmse": self.trans_rmse,
                "trans_max": self.trans_max, "rot_mean": self.rot_mean, "rot_rmse": self.rot_rmse,
                "rot_max": self.rot_max}


def associate(est: Trajectory, truth: Trajectory, tolerance: float | None = None):
    """Index of the nearest-in-time truth pose for each estimate (-1 if none within tolerance).

    The default tolerance is half the median spacing of ``truth``.
    """
    if len(est) == 0 or len(truth) == 0:
        raise EmptyTrajectory("cannot evaluate an empty trajectory")
    if tolerance is None:
        tolerance = 0.5 * float(np.median(np.diff(truth.times))) if len(truth) > 1 else 1e-9
    tt = truth.times
    j = np.clip(np.searchsorted(tt, est.times), 1, max(1, len(tt) - 1))
    left = np.clip(j - 1, 0, len(tt) - 1)
    right = np.clip(j, 0, len(tt) - 1)
    pick = np.where(np.abs(est.times - tt[left]) <= np.abs(tt[right] - est.times), left, right)
    ok = np.abs(tt[pick] - est.times) <= tolerance + 1e-12
    return np.where(ok, pick, -1)


def _matched(est: Trajectory, truth: Trajectory, tolerance):
    idx = associate(est, truth, tolerance)
    keep = np.flatnonzero(idx >= 0)
    if len(keep) == 0:
        raise NoTemporalOverlap("no estimate lies within tolerance of a ground-truth stamp")
    return [est.poses[k] for k in keep], [truth.poses[idx[k]] for k in keep], est.times[keep]


def _relative_to_start(poses: Sequence[PoseSE3]) -> list:
    inv0 = se3.invert(poses[0])
    return [se3.compose(inv0, p) for p in poses]


def ate(est: Trajectory, truth: Trajectory, tolerance: float | None = None) -> AteResult:
    """Absolute translational error after anchoring both paths at their first matched pose.

    The anchor frame has zero error by construction and is excluded from the
    statistics; a single-pose estimate therefore scores 0.
    """
    e, g, _ = _matched(est, truth, tolerance)
    e, g = _relative_to_start(e), _relative_to_start(g)
    errors = np.array([np.linalg.norm(a.translation - b.translation) for a, b in zip(e, g)])
    scored = errors[1:] if len(errors) > 1 else errors
    return AteResult(float(np.sqrt(np.mean(scored ** 2))), float(scored.mean()), float(scored.max()), errors)


def rpe(est: Trajectory, truth: Trajectory, delta: int = 1, tolerance: float | None = None) -> RpeResult:
    """Relative pose error over ``delta``-frame intervals of the (associated) estimate."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    e, g, _ = _matched(est, truth, tolerance)
    if len(e) <= delta:
        raise TrajectoryTooShort(f"{len(e)} matched poses, need more than delta={delta}")
    terr, rerr = [], []
    for k in range(len(e) - delta):
        rel_e = se3.compose(se3.invert(e[k]), e[k + delta])
        rel_g = se3.compose(se3.invert(g[k]), g[k + delta])
        err = se3.compose(se3.invert(rel_g), rel_e)
        terr.append(float(np.linalg.norm(err.translation)))
        rerr.append(se3.rotation_angle(err))
    terr, rerr = np.array(terr), np.array(rerr)
    return RpeResult(delta, float(terr.mean()), float(np.sqrt(np.mean(terr ** 2))), float(terr.max()),
                     float(rerr.mean()), float(np.sqrt(np.mean(rerr ** 2))), float(rerr.max()), terr, rerr)


def imu_dead_reckoning(imu: Sequence[ImuSample], origin: PoseSE3 = PoseSE3.identity()) -> Trajectory:
    """First-order strapdown integration starting at rest at ``origin``."""
    if len(imu) < 2:
        raise TrajectoryTooShort(f"need at least 2 IMU samples, got {len(imu)}")
    t, gyro, accel = imu_arrays(imu)
    q = origin.rotation.copy()
    p = origin.translation.copy()
    v = np.zeros(3)
    poses = [origin]
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        a_world = se3.quat_to_matrix(q) @ accel[k] + GRAVITY_WORLD
        v = v + a_world * dt
        p = p + v * dt
        q = se3.quat_mul(q, se3.quat_from_rotvec(gyro[k] * dt))
        q = q / np.linalg.norm(q)
        poses.append(PoseSE3(q, p))
    return Trajectory(t, poses)


def align_to(traj: Trajectory, anchor: PoseSE3) -> Trajectory:
    """Re-anchor ``traj`` so its first pose coincides with ``anchor``."""
    if len(traj) == 0:
        return traj
    T = se3.compose(anchor, se3.invert(traj.poses[0]))
    return traj.transformed(T)


def _first_truth_pose(est: Trajectory, truth: Trajectory, tolerance=None) -> PoseSE3:
    idx = associate(est, truth, tolerance)
    ok = idx[idx >= 0]
    if len(ok) == 0:
        raise NoTemporalOverlap("estimate and truth do not overlap in time")
    return truth.poses[ok[0]]


def metrics(est: Trajectory, truth: Trajectory, delta: int = 1, tolerance=None) -> dict:
    a = ate(est, truth, tolerance)
    out = {"ate": a.to_dict()}
    try:
        out["rpe"] = rpe(est, truth, delta, tolerance).to_dict()
    except TrajectoryTooShort:
        out["rpe"] = None
    return out


# --- report -----------------------------------------------------------------

TRUTH_STYLE = {"stroke": "#d62728", "stroke-dasharray": "6,4"}
EST_STYLE = {"stroke": "#1f77b4"}
BASELINE_STYLE = {"stroke": "#7f7f7f"}


def _svg_polyline(xy: np.ndarray, to_px, style: dict, label: str) -> str:
    pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in (to_px(x, y) for x, y in xy))
    attrs = " ".join(f"{k}={quoteattr(v)}" for k, v in style.items())
    return (f'  <polyline id={quoteattr(label)} class={quoteattr(label)} fill="none" '
            f'stroke-width="2" {attrs} points="{pts}"/>')


def render_svg(truth: Trajectory, est: Trajectory, baseline: Trajectory | None = None,
               scale: float = 60.0, margin: float = 1.0) -> str:
    """Top-down x-y plot with a 1 m grid. View extent follows truth and estimate only."""
    xy = np.vstack([truth.positions()[:, :2], est.positions()[:, :2]])
    xmin, ymin = np.floor(xy.min(axis=0) - margin)
    xmax, ymax = np.ceil(xy.max(axis=0) + margin)
    width, height = (xmax - xmin) * scale, (ymax - ymin) * scale

    def to_px(x, y):
        return (x - xmin) * scale, (ymax - y) * scale

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        '  <rect x="0" y="0" width="100%" height="100%" fill="white"/>',
        '  <g id="grid" stroke="#dddddd" stroke-width="1">',
    ]
    for gx in np.arange(xmin, xmax + 0.5):
        px, _ = to_px(gx, 0)
        lines.append(f'    <line x1="{px:.2f}" y1="0" x2="{px:.2f}" y2="{height:.0f}"/>')
    for gy in np.arange(ymin, ymax + 0.5):
        _, py = to_px(0, gy)
        lines.append(f'    <line x1="0" y1="{py:.2f}" x2="{width:.0f}" y2="{py:.2f}"/>')
    lines.append("  </g>")
    if baseline is not None and len(baseline):
        lines.append(_svg_polyline(baseline.positions()[:, :2], to_px, BASELINE_STYLE, "baseline"))
    lines.append(_svg_polyline(truth.positions()[:, :2], to_px, TRUTH_STYLE, "truth"))
    lines.append(_svg_polyline(est.positions()[:, :2], to_px, EST_STYLE, "estimate"))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def report(est: Trajectory, truth: Trajectory, baseline: Trajectory | None, out_dir,
           delta: int = 1, tolerance: float | None = None, figures: bool = True) -> dict:
    """Write metrics.json, trajectory CSVs, trajectory.svg and (optionally) matplotlib figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = metrics(est, truth, delta, tolerance)
    result["baseline"] = metrics(baseline, truth, delta, tolerance) if baseline is not None else None
    with (out / "metrics.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")

    anchor = _first_truth_pose(est, truth, tolerance)
    est_a = align_to(est, anchor)
    base_a = align_to(baseline, _first_truth_pose(baseline, truth, tolerance)) if baseline is not None else None
    est.to_csv(out / "estimate.csv")
    truth.to_csv(out / "truth.csv")
    if baseline is not None:
        baseline.to_csv(out / "baseline.csv")
    (out / "trajectory.svg").write_text(render_svg(truth, est_a, base_a), encoding="utf-8")
    if figures:
        from .plotting import plot_trajectories, plot_error_curve

        plot_trajectories(truth, est_a, base_a, out / "trajectory.png")
        a = ate(est, truth, tolerance)
        matched_t = est.times[associate(est, truth, tolerance) >= 0]
        plot_error_curve(matched_t, a.errors, out / "ate_error.png")
    return result


def position_error_at(traj: Trajectory, truth: Trajectory, t: float) -> float:
    """Start-anchored position error of ``traj`` at the sample nearest ``t``."""
    k = int(np.argmin(np.abs(traj.times - t)))
    j = int(np.argmin(np.abs(truth.times - traj.times[k])))
    e = se3.compose(se3.invert(traj.poses[0]), traj.poses[k])
    g = se3.compose(se3.invert(truth.poses[0]), truth.poses[j])
    return float(np.linalg.norm(e.translation - g.translation))

