"""Spherical projection between LiDAR point clouds and range images.

A point cloud is an (N, 4) array of (x, y, z, intensity) rows in sensor
coordinates. A range image is an (H, W, 2) grid storing per-pixel range in
meters and intensity, with 0 in both channels marking empty pixels.

Conventions, fixed once and tested:
  * azimuth = atan2(y, x), column 0 at -pi, columns increase toward +pi;
  * row 0 at the top of the elevation field of view (fov_up), rows increase
    downward toward fov_down;
  * when several points fall into one pixel the nearest one wins;
  * returns closer than MIN_SELF_RETURN are discarded as sensor self-hits.

All internal angle/range math runs in float64 so that
project(unproject(project(P))) reproduces project(P) bit-exactly; image
channels are stored as float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError

MIN_SELF_RETURN = 1e-3  # meters; below this a return is a sensor self-hit


@dataclass(frozen=True)
class ProjectionConfig:
    """Geometry of the spherical projection.

    Args:
        height: number of image rows (elevation bins).
        width: number of image columns (azimuth bins).
        fov_up: upper elevation bound in degrees.
        fov_down: lower elevation bound in degrees (typically negative).
        max_range: returns beyond this range in meters are dropped.
    """

    height: int = 64
    width: int = 1440
    fov_up: float = 2.0
    fov_down: float = -24.8
    max_range: float = 80.0

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ConfigurationError(
                f"image dims must be positive, got {self.height}x{self.width}")
        if not self.fov_up > self.fov_down:
            raise ConfigurationError(
                f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})")
        if self.max_range <= 0:
            raise ConfigurationError(f"max_range must be positive, got {self.max_range}")


@dataclass
class RangeImage:
    """An (H, W, 2) float32 grid of (range [m], intensity)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise DataError(f"range image must be (H, W, 2), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def distance(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, :, 1]

    @property
    def mask(self) -> np.ndarray:
        """Boolean occupancy: a pixel is valid iff its range is positive."""
        return self.data[:, :, 0] > 0.0


def _validate_cloud(cloud: np.ndarray) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.size == 0:
        return cloud.reshape(0, 4)
    if cloud.ndim != 2 or cloud.shape[1] != 4:
        raise DataError(f"point cloud must be (N, 4), got {cloud.shape}")
    if not np.isfinite(cloud).all():
        raise DataError("point cloud contains NaN or Inf values")
    return cloud


def project(cloud: np.ndarray, cfg: ProjectionConfig) -> RangeImage:
    """Project a point cloud into a range image.

    Args:
        cloud: (N, 4) array of (x, y, z, intensity); may be empty.
        cfg: projection geometry.

    Returns:
        RangeImage with the nearest return per pixel; empty pixels hold zeros.
    """
    cloud = _validate_cloud(cloud)
    img = np.zeros((cfg.height, cfg.width, 2), dtype=np.float32)
    if cloud.shape[0] == 0:
        return RangeImage(img)

    x, y, z = cloud[:, 0], cloud[:, 1], cloud[:, 2]
    rng = np.sqrt(x * x + y * y + z * z)
    keep = (rng >= MIN_SELF_RETURN) & (rng <= cfg.max_range)

    fov_up = np.deg2rad(cfg.fov_up)
    fov_down = np.deg2rad(cfg.fov_down)
    # Safe divisor: points with rng < MIN_SELF_RETURN are already excluded.
    elev = np.arcsin(np.clip(z / np.maximum(rng, MIN_SELF_RETURN), -1.0, 1.0))
    keep &= (elev >= fov_down) & (elev <= fov_up)
    if not keep.any():
        return RangeImage(img)

    azim = np.arctan2(y[keep], x[keep])
    elev = elev[keep]
    rng = rng[keep]
    inten = cloud[keep, 3]

    cols = np.floor((azim + np.pi) / (2.0 * np.pi) * cfg.width).astype(np.int64)
    rows = np.floor((fov_up - elev) / (fov_up - fov_down) * cfg.height).astype(np.int64)
    np.clip(cols, 0, cfg.width - 1, out=cols)
    np.clip(rows, 0, cfg.height - 1, out=rows)

    # Nearest point wins; ties broken by original point order for determinism.
    flat = rows * cfg.width + cols
    order = np.lexsort((np.arange(flat.shape[0]), rng, flat))
    flat_sorted = flat[order]
    first = np.ones(flat_sorted.shape[0], dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[first]

    img[rows[winners], cols[winners], 0] = rng[winners].astype(np.float32)
    img[rows[winners], cols[winners], 1] = inten[winners].astype(np.float32)
    return RangeImage(img)


def unproject(img: RangeImage, cfg: ProjectionConfig) -> np.ndarray:
    """Back-project a range image to a point cloud at pixel-center rays.

    Emits one point per valid pixel, in row-major pixel order. Intensity is
    passed through bit-exactly.
    """
    if (img.height, img.width) != (cfg.height, cfg.width):
        raise DataError(
            f"image shape {img.height}x{img.width} does not match config "
            f"{cfg.height}x{cfg.width}")

    rows, cols = np.nonzero(img.mask)
    if rows.size == 0:
        return np.zeros((0, 4), dtype=np.float64)

    fov_up = np.deg2rad(cfg.fov_up)
    fov_down = np.deg2rad(cfg.fov_down)
    elev = fov_up - (rows + 0.5) * (fov_up - fov_down) / cfg.height
    azim = -np.pi + (cols + 0.5) * (2.0 * np.pi) / cfg.width

    d = img.data[rows, cols, 0].astype(np.float64)
    cloud = np.empty((rows.size, 4), dtype=np.float64)
    cloud[:, 0] = d * np.cos(elev) * np.cos(azim)
    cloud[:, 1] = d * np.cos(elev) * np.sin(azim)
    cloud[:, 2] = d * np.sin(elev)
    cloud[:, 3] = img.data[rows, cols, 1].astype(np.float64)
    return cloud


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_cloud(path: str | Path, cloud: np.ndarray) -> None:
    """Write a point cloud as flat little-endian float32 (N, 4) binary."""
    cloud = _validate_cloud(cloud)
    cloud.astype("<f4").tofile(str(path))


def load_cloud(path: str | Path) -> np.ndarray:
    """Read a flat float32 (N, 4) binary point cloud as float64."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"point cloud file not found: {path}")
    raw = np.fromfile(str(path), dtype="<f4")
    if raw.size % 4 != 0:
        raise DataError(f"cloud file size not divisible by 4 floats: {path}")
    return raw.reshape(-1, 4).astype(np.float64)


def save_range_image(path: str | Path, img: RangeImage) -> None:
    """Write a range image: uint32 header (H, W) then float32 H*W*2 payload."""
    with open(path, "wb") as fh:
        np.array([img.height, img.width], dtype="<u4").tofile(fh)
        img.data.astype("<f4").tofile(fh)


def load_range_image(path: str | Path) -> RangeImage:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"range image file not found: {path}")
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u4", count=2)
        if header.size != 2:
            raise DataError(f"truncated range image header: {path}")
        h, w = int(header[0]), int(header[1])
        payload = np.fromfile(fh, dtype="<f4")
    if payload.size != h * w * 2:
        raise DataError(
            f"range image payload size {payload.size} != {h}x{w}x2: {path}")
    return RangeImage(payload.reshape(h, w, 2))
