"""Parameterized synthetic weather corruption for point clouds.

The model is deliberately simple: original points survive a Bernoulli dropout
and lose intensity exponentially with range, and a Poisson-distributed number
of low-reflectance scatter points is injected uniformly inside a sensor-
centered ball. Physical fidelity is out of scope; the point is a controllable,
exactly reproducible degradation with per-point provenance flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .range_image import _validate_cloud

KINDS = ("none", "snow", "fog", "rain")

SCATTER_INTENSITY_MAX = 0.2  # weather returns are low-reflectance


@dataclass(frozen=True)
class CorruptionParams:
    """Severity knobs for one corruption pass.

    Args:
        kind: label only; severity lives in the numeric fields.
        scatter_rate: expected number of injected scatter points per scan.
        scatter_range_max: radius in meters of the scatter ball.
        dropout_prob: probability that an original point is removed.
        attenuation: per-meter exponential intensity decay coefficient.
        rng_seed: seed making the corruption exactly reproducible.
    """

    kind: str = "none"
    scatter_rate: float = 0.0
    scatter_range_max: float = 20.0
    dropout_prob: float = 0.0
    attenuation: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown corruption kind {self.kind!r}, expected one of {KINDS}")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ConfigurationError(f"dropout_prob must be in [0, 1], got {self.dropout_prob}")
        if self.scatter_rate < 0:
            raise ConfigurationError(f"scatter_rate must be >= 0, got {self.scatter_rate}")
        if self.scatter_range_max <= 0:
            raise ConfigurationError(f"scatter_range_max must be > 0, got {self.scatter_range_max}")
        if self.attenuation < 0:
            raise ConfigurationError(f"attenuation must be >= 0, got {self.attenuation}")


def corrupt(cloud: np.ndarray, params: CorruptionParams) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a point cloud.

    Args:
        cloud: (N, 4) array of (x, y, z, intensity).
        params: corruption parameters including the seed.

    Returns:
        (corrupted_cloud, noise_flags): surviving originals followed by
        injected scatter points; flags are True exactly for injected points.
    """
    cloud = _validate_cloud(cloud)
    rng = np.random.default_rng(params.rng_seed)

    # Draw order is fixed (dropout, count, directions, radii, intensities) so
    # a seed fully determines the output.
    keep = rng.random(cloud.shape[0]) >= params.dropout_prob
    kept = cloud[keep].copy()
    if params.attenuation > 0 and kept.shape[0] > 0:
        ranges = np.linalg.norm(kept[:, :3], axis=1)
        kept[:, 3] *= np.exp(-params.attenuation * ranges)

    n_scatter = int(rng.poisson(params.scatter_rate)) if params.scatter_rate > 0 else 0
    if n_scatter > 0:
        dirs = rng.normal(size=(n_scatter, 3))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
        radii = params.scatter_range_max * rng.random(n_scatter) ** (1.0 / 3.0)
        scatter = np.empty((n_scatter, 4), dtype=np.float64)
        scatter[:, :3] = dirs * radii[:, None]
        scatter[:, 3] = rng.uniform(0.0, SCATTER_INTENSITY_MAX, n_scatter)
        out = np.concatenate([kept, scatter], axis=0)
    else:
        out = kept

    flags = np.zeros(out.shape[0], dtype=bool)
    flags[kept.shape[0]:] = True
    return out, flags
