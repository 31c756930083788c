"""Radar front-end: overlay consecutive scans and project to a panoramic depth image."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyInput, NonMonotonicTimestamps, ShapeMismatch
from .world import RadarScan


@dataclass(frozen=True)
class ImagingConfig:
    height: int = 16
    width: int = 64
    azimuth_fov: float = math.radians(120.0)
    elevation_fov: float = math.radians(30.0)
    max_range: float = 8.0
    overlay_depth: int = 3

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.azimuth_fov <= 0 or self.elevation_fov <= 0 or self.max_range <= 0:
            raise ValueError("FOVs and max_range must be positive")
        if self.overlay_depth < 1:
            raise ValueError("overlay_depth must be >= 1")


@dataclass(frozen=True, eq=False)
class PanoramicImage:
    """H x W grid; pixel = 1 - r_min / max_range, 0 where nothing returned."""

    data: np.ndarray
    frame_timestamp: float

    @property
    def shape(self):
        return self.data.shape


def overlay(scans: Sequence[RadarScan], cfg: ImagingConfig) -> RadarScan:
    """Union of up to ``overlay_depth`` scans, stamped with the newest one.

    Points are stacked as-is in their own sensor frames (no motion
    compensation) and duplicates are kept.
    """
    if not scans:
        raise EmptyInput("overlay needs at least one scan")
    if len(scans) > cfg.overlay_depth:
        raise ValueError(f"got {len(scans)} scans, overlay_depth is {cfg.overlay_depth}")
    stamps = [s.timestamp for s in scans]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise NonMonotonicTimestamps("scans must be in increasing time order")
    return RadarScan(stamps[-1], np.concatenate([s.points for s in scans], axis=0))


def pixel_indices(points: np.ndarray, cfg: ImagingConfig):
    """Row, column, range and in-view mask for an (N, >=3) point array."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    az = np.arctan2(y, x)
    el = np.arctan2(z, np.sqrt(x * x + y * y))
    inside = (np.abs(az) <= cfg.azimuth_fov / 2) & (np.abs(el) <= cfg.elevation_fov / 2) & (r <= cfg.max_range)
    col = np.floor((az + cfg.azimuth_fov / 2) / cfg.azimuth_fov * cfg.width).astype(int)
    row = np.floor((cfg.elevation_fov / 2 - el) / cfg.elevation_fov * cfg.height).astype(int)
    col = np.clip(col, 0, cfg.width - 1)
    row = np.clip(row, 0, cfg.height - 1)
    return row, col, r, inside


def project(scan: RadarScan, cfg: ImagingConfig) -> PanoramicImage:
    img = np.full(cfg.height * cfg.width, np.inf)
    pts = scan.points
    if len(pts):
        row, col, r, inside = pixel_indices(pts, cfg)
        np.minimum.at(img, row[inside] * cfg.width + col[inside], r[inside])
    filled = np.isfinite(img)
    out = np.zeros_like(img)
    out[filled] = 1.0 - img[filled] / cfg.max_range
    out = out.reshape(cfg.height, cfg.width)
    out.setflags(write=False)
    return PanoramicImage(out, scan.timestamp)


def pixel_center(row: int, col: int, cfg: ImagingConfig):
    """(azimuth, elevation) at the centre of a pixel."""
    az = (col + 0.5) / cfg.width * cfg.azimuth_fov - cfg.azimuth_fov / 2
    el = cfg.elevation_fov / 2 - (row + 0.5) / cfg.height * cfg.elevation_fov
    return az, el


def image_pair(prev: PanoramicImage, curr: PanoramicImage) -> np.ndarray:
    """Stack two images into a (2, H, W) array: channel 0 = prev, 1 = curr."""
    if prev.shape != curr.shape:
        raise ShapeMismatch(f"image shapes differ: {prev.shape} vs {curr.shape}")
    return np.stack([prev.data, curr.data])


def frame_images(scans: Sequence[RadarScan], cfg: ImagingConfig) -> list:
    """Panoramic image per frame, each built from the last ``overlay_depth`` scans."""
    images = []
    for k in range(len(scans)):
        window = scans[max(0, k - cfg.overlay_depth + 1):k + 1]
        images.append(project(overlay(window, cfg), cfg))
    return images


def write_pgm(image: PanoramicImage, path) -> None:
    """Plain-text P2 dump with maxval 255."""
    vals = np.rint(255 * image.data).astype(int)
    h, w = vals.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in vals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text(encoding="ascii").splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a P2 PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w) / maxval
