"""In-memory scan sets and conversions between range images and the
normalized tensors the networks consume.

Network units: channel 0 is distance / max_range, channel 1 is raw intensity.
Desk-scale datasets fit comfortably in memory, so a ScanSet materializes
every image up front.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .pairing import Pose, load_poses
from .range_image import ProjectionConfig, RangeImage, load_cloud, project


def image_to_tensor(img: RangeImage, max_range: float) -> torch.Tensor:
    """RangeImage -> (2, H, W) float32 tensor in network units."""
    data = np.ascontiguousarray(img.data.transpose(2, 0, 1)).copy()
    data[0] /= max_range
    return torch.from_numpy(data)


def tensor_to_image(t: torch.Tensor, max_range: float) -> RangeImage:
    """(2, H, W) tensor in network units -> RangeImage in raw units.

    Network outputs are unconstrained, so distance is clamped to >= 0 and
    intensity to [0, 1] to restore the image invariants.
    """
    arr = t.detach().cpu().numpy().astype(np.float32)
    data = np.empty((arr.shape[1], arr.shape[2], 2), dtype=np.float32)
    data[:, :, 0] = np.maximum(arr[0] * max_range, 0.0)
    data[:, :, 1] = np.clip(arr[1], 0.0, 1.0)
    return RangeImage(data)


def denormalize(t: torch.Tensor, max_range: float) -> torch.Tensor:
    """Scale the distance channel back to meters, differentiably."""
    scale = t.new_ones(2)
    scale[0] = max_range
    return t * scale.view(2, 1, 1)


@dataclass
class ScanSet:
    """A materialized split: aligned clean/degraded tensors plus poses."""

    indices: list[int]
    poses: list[Pose]
    clean: torch.Tensor            # (n, 2, H, W) network units
    noisy: torch.Tensor | None     # same, or None when no degraded data exists
    max_range: float

    def __post_init__(self) -> None:
        n = len(self.indices)
        if len(self.poses) != n or self.clean.shape[0] != n:
            raise DataError("inconsistent ScanSet lengths")
        if self.noisy is not None and self.noisy.shape != self.clean.shape:
            raise DataError("clean/noisy shape mismatch")

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.indices)


def _scan_path(directory: Path, index: int) -> Path:
    return directory / f"{index:06d}.bin"


def load_scan_set(
    scans_dir: str | Path,
    poses_file: str | Path,
    cfg: ProjectionConfig,
    corrupted_dir: str | Path | None = None,
    split: tuple[int, int] | None = None,
) -> ScanSet:
    """Project scans (and their corrupted counterparts) into a ScanSet.

    Args:
        scans_dir: directory of clean NNNNNN.bin clouds.
        poses_file: matching pose file.
        cfg: projection geometry.
        corrupted_dir: optional directory of corrupted clouds, same naming.
        split: half-open (start, end) range over scan indices; None = all.
    """
    scans_dir = Path(scans_dir)
    if not scans_dir.is_dir():
        raise DataError(f"scans directory not found: {scans_dir}")
    poses = load_poses(poses_file)
    if split is not None:
        poses = [p for p in poses if split[0] <= p.index < split[1]]
    if not poses:
        raise DataError(f"no poses selected from {poses_file} (split={split})")

    clean, noisy = [], []
    for pose in poses:
        img = project(load_cloud(_scan_path(scans_dir, pose.index)), cfg)
        clean.append(image_to_tensor(img, cfg.max_range))
        if corrupted_dir is not None:
            path = _scan_path(Path(corrupted_dir), pose.index)
            noisy.append(image_to_tensor(project(load_cloud(path), cfg), cfg.max_range))

    return ScanSet(
        indices=[p.index for p in poses],
        poses=poses,
        clean=torch.stack(clean),
        noisy=torch.stack(noisy) if corrupted_dir is not None else None,
        max_range=cfg.max_range,
    )
