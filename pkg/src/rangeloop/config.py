"""Experiment configuration: one YAML file drives every command.

The file mirrors the dataclasses section by section; unknown keys are
rejected so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corruption import CorruptionParams
from .errors import ConfigurationError, DataError
from .evaluation import LoopCriterion
from .nets import DescriptorConfig, RestorationConfig
from .range_image import ProjectionConfig
from .trainer import STRATEGIES, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """Dataset locations and the index splits carving them up.

    Splits are half-open [lo, hi) ranges over scan indices. The database
    split serves clean map scans; the query split serves degraded scans.
    """

    scans_dir: str = "data/scans"
    poses_file: str = "data/poses.txt"
    corrupted_dir: str = "data/corrupted"
    train_split: tuple[int, int] = (0, 110)
    database_split: tuple[int, int] = (0, 110)
    query_split: tuple[int, int] = (110, 220)

    def __post_init__(self) -> None:
        for name in ("train_split", "database_split", "query_split"):
            lo, hi = (int(v) for v in getattr(self, name))
            if lo < 0 or hi <= lo:
                raise ConfigurationError(f"{name} must satisfy 0 <= lo < hi")
            object.__setattr__(self, name, (lo, hi))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    strategy: str = "union"
    output_dir: str = "runs/experiment"
    data: DataConfig = field(default_factory=DataConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    corruption: CorruptionParams = field(default_factory=CorruptionParams)
    ldr: RestorationConfig = field(default_factory=RestorationConfig)
    lpr: DescriptorConfig = field(default_factory=DescriptorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loop: LoopCriterion = field(default_factory=LoopCriterion)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )

    def require_paths(self) -> None:
        """Fail unless the referenced dataset files exist."""
        if not Path(self.data.scans_dir).is_dir():
            raise DataError(f"scans directory not found: {self.data.scans_dir}")
        if not Path(self.data.poses_file).is_file():
            raise DataError(f"poses file not found: {self.data.poses_file}")


_SECTIONS = {
    "data": DataConfig,
    "projection": ProjectionConfig,
    "corruption": CorruptionParams,
    "ldr": RestorationConfig,
    "lpr": DescriptorConfig,
    "train": TrainConfig,
    "loop": LoopCriterion,
}


def _build_section(cls, raw: dict, section: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {section!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(names)
    if unknown:
        raise ConfigurationError(
            f"unknown keys in section {section!r}: {sorted(unknown)}"
        )
    kwargs = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML experiment file into an ExperimentConfig."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"could not parse {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"top level of {path} must be a mapping")

    known_top = {"seed", "strategy", "output_dir", *_SECTIONS}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")

    kwargs: dict = {}
    for key in ("seed", "strategy", "output_dir"):
        if key in raw:
            kwargs[key] = raw[key]
    for section, cls in _SECTIONS.items():
        if section in raw:
            kwargs[section] = _build_section(cls, raw[section], section)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def _to_plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    """Write a config back to YAML; load_config inverts this exactly."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        yaml.safe_dump(_to_plain(cfg), sort_keys=False, default_flow_style=None)
    )
