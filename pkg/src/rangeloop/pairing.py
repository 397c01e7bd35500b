"""Pose handling, rigid scan reprojection, and pose-thresholded pair search.

Poses are world-from-sensor transforms: p_world = R @ p_sensor + T. A scan
recorded at pose (R_s, T_s) is expressed in the frame of pose (R_d, T_d) by

    p_d = R_d^{-1} (R_s p_s + T_s - T_d)

which is what `reproject_scan` implements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .range_image import _validate_cloud

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """A rigid transform with a scan index."""

    index: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))


def validate_pose(pose: Pose) -> None:
    """Check orthonormality (R^T R = I) and det(R) = +1 within tolerance."""
    r = pose.rotation
    if not np.isfinite(r).all() or not np.isfinite(pose.translation).all():
        raise DataError(f"pose {pose.index}: non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > ORTHONORMAL_TOL:
        raise DataError(f"pose {pose.index}: rotation not orthonormal (max err {err:.2e})")
    if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
        raise DataError(f"pose {pose.index}: rotation determinant != +1")


def reproject_scan(scan: np.ndarray, src: Pose, dst: Pose) -> np.ndarray:
    """Express a scan recorded at `src` in the sensor frame of `dst`.

    Intensity is passed through unchanged.
    """
    validate_pose(src)
    validate_pose(dst)
    scan = _validate_cloud(scan)
    out = scan.copy()
    if scan.shape[0] == 0:
        return out
    world = scan[:, :3] @ src.rotation.T + src.translation
    out[:, :3] = (world - dst.translation) @ dst.rotation
    return out


def angular_distance_deg(a: Pose, b: Pose) -> float:
    """Geodesic rotation distance between two poses, in degrees."""
    trace = np.trace(b.rotation.T @ a.rotation)
    return float(np.degrees(np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))))


def find_aligned_pairs(
    seq_a: list[Pose],
    seq_b: list[Pose],
    dist_thresh: float = 0.01,
    ang_thresh: float = 0.1,
) -> list[tuple[int, int]]:
    """Match each scan in seq_a to its nearest seq_b scan within thresholds.

    Args:
        seq_a, seq_b: pose sequences.
        dist_thresh: maximum translation distance in meters.
        ang_thresh: maximum rotation angle difference in degrees.

    Returns:
        (index_a, index_b) pairs, one per seq_a scan that found a match.
        Distance ties are broken by the lower seq_b index.
    """
    if dist_thresh <= 0 or ang_thresh <= 0:
        raise ConfigurationError("pairing thresholds must be positive")
    for p in list(seq_a) + list(seq_b):
        validate_pose(p)

    pos_b = np.array([p.translation for p in seq_b]).reshape(-1, 3)
    idx_b = np.array([p.index for p in seq_b], dtype=np.int64)
    pairs: list[tuple[int, int]] = []
    for pa in seq_a:
        if pos_b.shape[0] == 0:
            break
        dists = np.linalg.norm(pos_b - pa.translation, axis=1)
        best = None
        for j in np.lexsort((idx_b, dists)):
            if dists[j] >= dist_thresh:
                break
            if angular_distance_deg(pa, seq_b[j]) < ang_thresh:
                best = j
                break
        if best is not None:
            pairs.append((pa.index, seq_b[best].index))
    return pairs


# ---------------------------------------------------------------------------
# Pose file format: "index r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz"
# ---------------------------------------------------------------------------

def save_poses(path: str | Path, poses: list[Pose]) -> None:
    with open(path, "w") as fh:
        for p in poses:
            mat = np.hstack([p.rotation, p.translation.reshape(3, 1)])
            fields = " ".join(repr(float(v)) for v in mat.reshape(-1))
            fh.write(f"{p.index} {fields}\n")


def load_poses(path: str | Path) -> list[Pose]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pose file not found: {path}")
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 13:
            raise DataError(f"{path}:{lineno}: expected 13 fields, got {len(parts)}")
        try:
            index = int(parts[0])
            vals = np.array([float(v) for v in parts[1:]], dtype=np.float64).reshape(3, 4)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: unparsable pose line") from exc
        poses.append(Pose(index=index, rotation=vals[:, :3], translation=vals[:, 3]))
    return poses
