"""Procedural toy world: an analytic scene ray-cast into LiDAR scans.

The world is a ground plane plus random boxes and vertical cylinders scattered
around a circular loop trajectory. Scans are produced by intersecting one ray
per range-image pixel with the scene, so every clean scan projects to a dense,
well-structured range image. The trajectory runs the loop several times with
small lateral/heading jitter on revisits, which yields genuine loop closures
for retrieval evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pairing import Pose, save_poses
from .range_image import ProjectionConfig, save_cloud

_EPS_T = 0.05  # minimum ray parameter, keeps hits off the sensor itself


@dataclass
class Scene:
    """Axis-aligned boxes, vertical cylinders, and a ground plane."""

    box_min: np.ndarray      # (nb, 3)
    box_max: np.ndarray      # (nb, 3)
    box_albedo: np.ndarray   # (nb,)
    cyl_center: np.ndarray   # (nc, 2) x, y
    cyl_radius: np.ndarray   # (nc,)
    cyl_z: np.ndarray        # (nc, 2) z0, z1
    cyl_albedo: np.ndarray   # (nc,)
    ground_z: float = 0.0
    ground_albedo: float = 0.25


def build_scene(
    seed: int,
    loop_radius: float = 38.0,
    n_boxes: int = 28,
    n_cylinders: int = 18,
    clearance: float = 3.5,
) -> Scene:
    """Place random structures in an annulus around the loop, off the path."""
    rng = np.random.default_rng(seed)

    def _place(n: int) -> np.ndarray:
        centers = np.empty((n, 2))
        for i in range(n):
            while True:
                ang = rng.uniform(0.0, 2.0 * np.pi)
                rad = rng.uniform(loop_radius - 20.0, loop_radius + 20.0)
                if rad > 1.0 and abs(rad - loop_radius) >= clearance:
                    centers[i] = (rad * np.cos(ang), rad * np.sin(ang))
                    break
        return centers

    bc = _place(n_boxes)
    half = rng.uniform(1.0, 4.0, size=(n_boxes, 2))
    height = rng.uniform(2.0, 12.0, size=n_boxes)
    box_min = np.column_stack([bc - half, np.zeros(n_boxes)])
    box_max = np.column_stack([bc + half, height])

    cc = _place(n_cylinders)
    cr = rng.uniform(0.3, 1.2, size=n_cylinders)
    ch = rng.uniform(2.0, 8.0, size=n_cylinders)
    cyl_z = np.column_stack([np.zeros(n_cylinders), ch])

    return Scene(
        box_min=box_min,
        box_max=box_max,
        box_albedo=rng.uniform(0.15, 0.9, size=n_boxes),
        cyl_center=cc,
        cyl_radius=cr,
        cyl_z=cyl_z,
        cyl_albedo=rng.uniform(0.15, 0.9, size=n_cylinders),
    )


def loop_trajectory(
    seed: int,
    n_per_lap: int = 110,
    laps: int = 2,
    loop_radius: float = 38.0,
    sensor_height: float = 1.7,
    revisit_jitter: float = 1.0,
    yaw_jitter_deg: float = 2.0,
) -> list[Pose]:
    """Poses along a circular loop, traversed `laps` times.

    Laps after the first get small radial and heading jitter so revisits are
    near but not identical to the first pass.
    """
    rng = np.random.default_rng(seed)
    poses = []
    idx = 0
    for lap in range(laps):
        for i in range(n_per_lap):
            phi = 2.0 * np.pi * i / n_per_lap
            radius = loop_radius
            yaw = phi + np.pi / 2.0
            if lap > 0:
                radius += rng.uniform(-revisit_jitter, revisit_jitter)
                yaw += np.deg2rad(rng.uniform(-yaw_jitter_deg, yaw_jitter_deg))
            t = np.array([radius * np.cos(phi), radius * np.sin(phi), sensor_height])
            c, s = np.cos(yaw), np.sin(yaw)
            r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            poses.append(Pose(index=idx, rotation=r, translation=t))
            idx += 1
    return poses


def _pixel_rays(cfg: ProjectionConfig) -> np.ndarray:
    """Unit ray directions at pixel centers, sensor frame, (H*W, 3)."""
    fov_up = np.deg2rad(cfg.fov_up)
    fov_down = np.deg2rad(cfg.fov_down)
    rows = np.arange(cfg.height)
    cols = np.arange(cfg.width)
    elev = fov_up - (rows + 0.5) * (fov_up - fov_down) / cfg.height
    azim = -np.pi + (cols + 0.5) * (2.0 * np.pi) / cfg.width
    ee, aa = np.meshgrid(elev, azim, indexing="ij")
    dirs = np.stack(
        [np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1)
    return dirs.reshape(-1, 3)


def raycast_scan(scene: Scene, pose: Pose, cfg: ProjectionConfig) -> np.ndarray:
    """Cast one ray per pixel and return the hit points as a sensor-frame cloud."""
    dirs_s = _pixel_rays(cfg)
    d = dirs_s @ pose.rotation.T
    o = pose.translation

    t_best = np.full(d.shape[0], np.inf)
    albedo = np.zeros(d.shape[0])

    def _consider(t: np.ndarray, valid: np.ndarray, alb: float) -> None:
        better = valid & (t > _EPS_T) & (t < t_best)
        t_best[better] = t[better]
        albedo[better] = alb

    # Ground plane.
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (scene.ground_z - o[2]) / d[:, 2]
    _consider(tg, np.isfinite(tg) & (d[:, 2] < 0), scene.ground_albedo)

    # Boxes: slab intersection.
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    for i in range(scene.box_min.shape[0]):
        t1 = (scene.box_min[i] - o) * inv
        t2 = (scene.box_max[i] - o) * inv
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        _consider(tnear, tfar >= tnear, float(scene.box_albedo[i]))

    # Cylinders: lateral surface of a vertical capped cylinder.
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    for i in range(scene.cyl_center.shape[0]):
        ox = o[0] - scene.cyl_center[i, 0]
        oy = o[1] - scene.cyl_center[i, 1]
        b = 2.0 * (ox * d[:, 0] + oy * d[:, 1])
        c = ox * ox + oy * oy - scene.cyl_radius[i] ** 2
        disc = b * b - 4.0 * a * c
        ok = (disc > 0) & (a > 1e-12)
        t = np.where(ok, (-b - np.sqrt(np.abs(disc))) / (2.0 * np.maximum(a, 1e-12)), np.inf)
        z = o[2] + t * d[:, 2]
        _consider(t, ok & (z >= scene.cyl_z[i, 0]) & (z <= scene.cyl_z[i, 1]),
                  float(scene.cyl_albedo[i]))

    hits = t_best <= cfg.max_range * 0.999
    cloud = np.empty((int(hits.sum()), 4), dtype=np.float64)
    cloud[:, :3] = dirs_s[hits] * t_best[hits, None]
    cloud[:, 3] = albedo[hits]
    return cloud


def generate_dataset(
    out_dir: str | Path,
    seed: int = 0,
    n_per_lap: int = 110,
    laps: int = 2,
    cfg: ProjectionConfig | None = None,
    loop_radius: float = 38.0,
) -> tuple[Path, Path]:
    """Write a full toy dataset: scans/NNNNNN.bin files and poses.txt.

    Returns:
        (scans_dir, poses_file) paths.
    """
    cfg = cfg or ProjectionConfig(height=32, width=720, max_range=80.0)
    out_dir = Path(out_dir)
    scans_dir = out_dir / "scans"
    scans_dir.mkdir(parents=True, exist_ok=True)

    scene = build_scene(seed)
    poses = loop_trajectory(seed + 1, n_per_lap=n_per_lap, laps=laps, loop_radius=loop_radius)
    for pose in poses:
        cloud = raycast_scan(scene, pose, cfg)
        save_cloud(scans_dir / f"{pose.index:06d}.bin", cloud)
    poses_file = out_dir / "poses.txt"
    save_poses(poses_file, poses)
    return scans_dir, poses_file
