"""Turn simulated recordings into supervised frame-pair sequences."""

from __future__ import annotations

import numpy as np

from . import se3
from .imaging import ImagingConfig, frame_images, image_pair
from .model import SequenceData
from .world import Floorplan, MotionScript, Recording, SensorNoiseConfig, imu_arrays, simulate_sequence


def imu_window_bounds(imu_times: np.ndarray, t_prev: float, t_curr: float):
    """Slice bounds of samples with ``t_prev < t <= t_curr``."""
    lo = int(np.searchsorted(imu_times, t_prev, side="right"))
    hi = int(np.searchsorted(imu_times, t_curr, side="right"))
    return lo, hi


def relative_targets(truth: se3.Trajectory) -> np.ndarray:
    """(N-1, 6) motions between consecutive poses, in the earlier body frame."""
    out = []
    for a, b in zip(truth.poses, truth.poses[1:]):
        out.append(se3.sixdof_from_pose(se3.compose(se3.invert(a), b)).as_vector())
    return np.array(out).reshape(-1, 6)


def sequence_data(rec: Recording, imaging: ImagingConfig = ImagingConfig()) -> SequenceData:
    """One training sample per radar frame after the first."""
    images = frame_images(rec.scans, imaging)
    t_imu, gyro, accel = imu_arrays(rec.imu)
    imu6 = np.hstack([gyro, accel])
    radar_t = rec.radar_times
    samples = []
    targets = relative_targets(rec.truth_at_radar())
    for k in range(1, len(images)):
        lo, hi = imu_window_bounds(t_imu, radar_t[k - 1], radar_t[k])
        samples.append((image_pair(images[k - 1], images[k]), imu6[lo:hi], targets[k - 1]))
    return SequenceData.from_samples(samples)


def simulate_dataset(plan: Floorplan, scripts, cfg: SensorNoiseConfig, imaging: ImagingConfig = ImagingConfig(),
                     seeds=None) -> list:
    """Simulate each script (with its own noise seed) and convert to ``SequenceData``."""
    out = []
    for i, script in enumerate(scripts):
        seed = cfg.rng_seed + i if seeds is None else seeds[i]
        run_cfg = SensorNoiseConfig.from_dict({**cfg.to_dict(), "rng_seed": seed})
        out.append(sequence_data(simulate_sequence(plan, script, run_cfg), imaging))
    return out
