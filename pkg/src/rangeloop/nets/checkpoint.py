"""Self-describing single-file checkpoints and parameter hashing.

A checkpoint is an .npz holding every state-dict array by name plus a JSON
metadata entry recording the network kind and its architecture config, so a
file can be loaded without external knowledge.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError

_META_KEY = "__meta__"


def save_checkpoint(
    path: str | Path, net: torch.nn.Module, meta: dict | None = None
) -> None:
    from .descriptor import DescriptorNet
    from .restoration import RestorationNet

    if isinstance(net, RestorationNet):
        kind = "restoration"
    elif isinstance(net, DescriptorNet):
        kind = "descriptor"
    else:
        raise DataError(f"cannot checkpoint module of type {type(net).__name__}")
    doc = {"kind": kind, "config": dataclasses.asdict(net.cfg), **(meta or {})}
    arrays = {name: tensor.detach().cpu().numpy()
              for name, tensor in net.state_dict().items()}
    np.savez(str(path), **{_META_KEY: np.bytes_(json.dumps(doc, sort_keys=True).encode())},
             **arrays)


def load_checkpoint(path: str | Path) -> tuple[torch.nn.Module, dict]:
    from .descriptor import DescriptorConfig, DescriptorNet
    from .restoration import RestorationConfig, RestorationNet

    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(str(path)) as data:
        if _META_KEY not in data:
            raise DataError(f"not a checkpoint file (missing metadata): {path}")
        meta = json.loads(bytes(data[_META_KEY]).decode())
        arrays = {k: data[k] for k in data.files if k != _META_KEY}

    cfg_dict = {k: tuple(v) if isinstance(v, list) else v
                for k, v in meta["config"].items()}
    if meta["kind"] == "restoration":
        net: torch.nn.Module = RestorationNet(RestorationConfig(**cfg_dict))
    elif meta["kind"] == "descriptor":
        net = DescriptorNet(DescriptorConfig(**cfg_dict))
    else:
        raise DataError(f"unknown checkpoint kind {meta['kind']!r}: {path}")
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    net.load_state_dict(state)
    net.eval()
    return net, meta


def parameter_hash(net: torch.nn.Module) -> str:
    """SHA-256 over all parameters and buffers in sorted name order."""
    digest = hashlib.sha256()
    state = net.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()
