from .restoration import RestorationConfig, RestorationNet
from .descriptor import DescriptorConfig, DescriptorNet
from .checkpoint import load_checkpoint, parameter_hash, save_checkpoint

__all__ = [
    "RestorationConfig",
    "RestorationNet",
    "DescriptorConfig",
    "DescriptorNet",
    "save_checkpoint",
    "load_checkpoint",
    "parameter_hash",
]
