"""Alternating training of the restoration and descriptor networks.

Three strategies share one epoch budget:

* ``union``: odd epochs update the restorer (reconstruction plus a
  descriptor-consistency term once the warmup ends), even epochs update the
  descriptor on restored queries.
* ``separate``: the restorer trains alone for the first half (consistency
  weight 0), then the descriptor trains on the frozen restorer's outputs.
* ``direct``: the descriptor trains on raw degraded queries on even epochs;
  odd epochs are idle so the update count matches ``union``.

Every epoch appends one JSON line to the log with losses, learning rate,
consistency weight, and SHA-256 parameter hashes of both networks, so
freeze violations are detectable after the fact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import ScanSet, denormalize
from .errors import ConfigurationError, DataError, NumericError
from .losses import ldr_loss, triplet_loss
from .nets import (
    DescriptorConfig,
    DescriptorNet,
    RestorationConfig,
    RestorationNet,
    parameter_hash,
    save_checkpoint,
)

STRATEGIES = ("union", "separate", "direct")

# Fixed codes mixed into the experiment seed so each random stream is
# independent but reproducible.
_SEED_CODES = {"init": 1, "order": 2, "augment": 3, "mining": 4, "corruption": 5}

# Incremented on every augmentation call; tests use it to confirm that both
# members of a pair are transformed together rather than independently.
AUGMENT_CALLS = 0


def sub_seed(seed: int, stream: str, *extra: int) -> int:
    """Derive a 32-bit seed for a named stream from the experiment seed."""
    code = _SEED_CODES[stream]
    ss = np.random.SeedSequence([int(seed), code, *[int(e) for e in extra]])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr_ldr: float = 1e-4
    lr_lpr: float = 1e-4
    lr_min: float = 1e-6
    t_max: int = 100
    warmup_epochs: int = 30
    lambda_warm: float = 0.01
    lambda_main: float = 0.1
    tau: float = 1.0
    margin: float = 0.5
    negatives: int = 6
    positive_radius: float = 5.0
    negative_radius: float = 20.0
    crop: tuple[int, int] = (32, 480)
    flip_prob: float = 0.5
    weight_decay: float = 1e-4
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0 < self.lr_min <= min(self.lr_ldr, self.lr_lpr):
            raise ConfigurationError("need 0 < lr_min <= each module's peak lr")
        if self.t_max < 1:
            raise ConfigurationError("t_max must be >= 1")
        if self.tau <= 0 or self.margin <= 0:
            raise ConfigurationError("tau and margin must be positive")
        if self.negatives < 1:
            raise ConfigurationError("negatives must be >= 1")
        if not 0 < self.positive_radius < self.negative_radius:
            raise ConfigurationError(
                "need 0 < positive_radius < negative_radius"
            )
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError("flip_prob must be in [0, 1]")
        object.__setattr__(self, "crop", tuple(int(c) for c in self.crop))
        if any(c < 8 for c in self.crop):
            raise ConfigurationError("crop sides must be >= 8")


def lambda_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Descriptor-consistency weight for a given global epoch (1-based)."""
    if epoch < 1:
        raise ConfigurationError("epoch numbering starts at 1")
    return cfg.lambda_warm if epoch <= cfg.warmup_epochs else cfg.lambda_main


def cosine_lr(ordinal: int, cfg: TrainConfig, module: str = "ldr") -> float:
    """Learning rate for a module's k-th training epoch (k is 1-based).

    Cosine decay from the module's peak rate to lr_min over t_max steps,
    held at lr_min afterwards.
    """
    if ordinal < 1:
        raise ConfigurationError("ordinal numbering starts at 1")
    if module not in ("ldr", "lpr"):
        raise ConfigurationError(f"unknown module {module!r}")
    peak = cfg.lr_ldr if module == "ldr" else cfg.lr_lpr
    t = min(ordinal - 1, cfg.t_max)
    return cfg.lr_min + 0.5 * (peak - cfg.lr_min) * (
        1.0 + math.cos(math.pi * t / cfg.t_max)
    )


@dataclass(frozen=True)
class EpochPlan:
    """One scheduled epoch: which module trains, at what rate and weight."""

    epoch: int
    module: str | None      # "ldr", "lpr", or None for an idle epoch
    ordinal: int            # per-module 1-based count; 0 when idle
    lr: float
    lam: float              # consistency weight; 0 outside ldr epochs


def schedule_plan(cfg: TrainConfig, strategy: str) -> list[EpochPlan]:
    """Expand a strategy into its full per-epoch schedule without training."""
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown strategy: {strategy!r}")
    plan: list[EpochPlan] = []
    counts = {"ldr": 0, "lpr": 0}
    half = (cfg.epochs + 1) // 2
    for epoch in range(1, cfg.epochs + 1):
        if strategy == "union":
            module = "ldr" if epoch % 2 == 1 else "lpr"
        elif strategy == "separate":
            module = "ldr" if epoch <= half else "lpr"
        else:
            module = "lpr" if epoch % 2 == 0 else None
        if module is None:
            plan.append(EpochPlan(epoch, None, 0, 0.0, 0.0))
            continue
        counts[module] += 1
        lam = 0.0
        if module == "ldr" and strategy == "union":
            lam = lambda_schedule(epoch, cfg)
        plan.append(
            EpochPlan(epoch, module, counts[module],
                      cosine_lr(counts[module], cfg, module), lam)
        )
    return plan


def crop_and_flip(
    members: list[torch.Tensor],
    crop: tuple[int, int],
    flip_prob: float,
    rng: np.random.Generator,
) -> list[torch.Tensor]:
    """Apply one shared random crop and horizontal flip to every member.

    All tensors must share (C, H, W). A single offset/flip draw keeps paired
    images (degraded/clean, query/positive/negatives) pixel-aligned.
    """
    global AUGMENT_CALLS
    AUGMENT_CALLS += 1
    h, w = members[0].shape[-2:]
    ch, cw = min(crop[0], h), min(crop[1], w)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.random() < flip_prob)
    out = []
    for t in members:
        view = t[..., top : top + ch, left : left + cw]
        out.append(torch.flip(view, dims=(-1,)) if flip else view.clone())
    return out


@dataclass
class TripletBatch:
    """A mined query/positive/negatives group, as full-size images."""

    query: torch.Tensor
    positive: torch.Tensor
    negatives: list[torch.Tensor]
    query_pos: int
    positive_pos: int
    negative_pos: list[int]


def mine_triplet(
    data: ScanSet,
    query_pos: int,
    restored_query: torch.Tensor,
    lpr: DescriptorNet,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TripletBatch | None:
    """Mine one triplet for the scan at array position query_pos.

    The positive is the geometrically nearby clean scan whose current
    descriptor is closest to the restored query's descriptor (ties break to
    the lower array position). Negatives are drawn uniformly from scans
    beyond the negative radius. Returns None when no scan lies within the
    positive radius.
    """
    positions = data.positions
    d = np.linalg.norm(positions - positions[query_pos], axis=1)
    cand = np.nonzero((d < cfg.positive_radius) & (np.arange(len(data)) != query_pos))[0]
    if cand.size == 0:
        return None
    neg_pool = np.nonzero(d > cfg.negative_radius)[0]
    if neg_pool.size < cfg.negatives:
        raise DataError(
            f"only {neg_pool.size} scans beyond the negative radius; "
            f"need {cfg.negatives}"
        )

    with torch.no_grad():
        q_desc = lpr(restored_query.unsqueeze(0))
        cand_desc = lpr(data.clean[cand])
        desc_dist = torch.linalg.vector_norm(cand_desc - q_desc, dim=1).numpy()
    best = int(cand[np.lexsort((cand, desc_dist))[0]])
    negs = [int(i) for i in rng.choice(neg_pool, size=cfg.negatives, replace=False)]

    return TripletBatch(
        query=restored_query,
        positive=data.clean[best],
        negatives=[data.clean[i] for i in negs],
        query_pos=query_pos,
        positive_pos=best,
        negative_pos=negs,
    )


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _freeze(net: torch.nn.Module, frozen: bool) -> None:
    net.requires_grad_(not frozen)
    net.eval() if frozen else net.train()


def _check_finite(loss: torch.Tensor, context: dict, out_dir: Path | None,
                  ldr: RestorationNet | None, lpr: DescriptorNet) -> None:
    if torch.isfinite(loss):
        return
    if out_dir is not None:
        snap = Path(out_dir) / "diagnostic"
        snap.mkdir(parents=True, exist_ok=True)
        if ldr is not None:
            save_checkpoint(snap / "ldr_at_failure.npz", ldr)
        save_checkpoint(snap / "lpr_at_failure.npz", lpr)
        (snap / "failure.json").write_text(json.dumps(context, indent=2) + "\n")
    raise NumericError(f"non-finite loss encountered: {context}")


def _restore_all(ldr: RestorationNet, images: torch.Tensor, chunk: int = 8) -> torch.Tensor:
    ldr.eval()
    with torch.no_grad():
        parts = [ldr(images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return torch.cat(parts)


def _ldr_epoch(
    data: ScanSet,
    ldr: RestorationNet,
    lpr: DescriptorNet,
    opt: torch.optim.Optimizer,
    plan: EpochPlan,
    cfg: TrainConfig,
    seed: int,
    out_dir: Path | None,
) -> dict:
    _freeze(ldr, False)
    _freeze(lpr, True)
    order = np.random.default_rng(sub_seed(seed, "order", plan.epoch)).permutation(len(data))
    rng_aug = np.random.default_rng(sub_seed(seed, "augment", plan.epoch))
    max_range = data.max_range
    sums = {"rec": 0.0, "ltd": 0.0, "total": 0.0}
    steps: list[dict] = []
    for step_idx, pos in enumerate(order):
        noisy, clean = crop_and_flip(
            [data.noisy[pos], data.clean[pos]], cfg.crop, cfg.flip_prob, rng_aug
        )
        pred = ldr(noisy.unsqueeze(0))
        desc_r = desc_c = None
        if plan.lam > 0:
            desc_r = lpr(pred)
            with torch.no_grad():
                desc_c = lpr(clean.unsqueeze(0))
        total, comps = ldr_loss(
            denormalize(pred, max_range),
            denormalize(clean.unsqueeze(0), max_range),
            desc_r,
            desc_c,
            lam=plan.lam,
            tau=cfg.tau,
        )
        _check_finite(total, {"epoch": plan.epoch, "module": "ldr", "sample": int(pos)},
                      out_dir, ldr, lpr)
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        sums["rec"] += comps["rec"]
        sums["ltd"] += comps["ltd"]
        sums["total"] += float(total.detach())
        steps.append({"step": step_idx, "epoch": plan.epoch, "module": "ldr",
                      "rec": comps["rec"], "ltd": comps["ltd"],
                      "loss": float(total.detach())})
    n = len(data)
    return {"rec": sums["rec"] / n, "ltd": sums["ltd"] / n, "loss": sums["total"] / n,
            "n_samples": n, "n_skipped": 0, "steps": steps}


def _lpr_epoch(
    data: ScanSet,
    ldr: RestorationNet | None,
    lpr: DescriptorNet,
    opt: torch.optim.Optimizer,
    plan: EpochPlan,
    cfg: TrainConfig,
    seed: int,
    out_dir: Path | None,
) -> dict:
    if ldr is not None:
        _freeze(ldr, True)
        queries = _restore_all(ldr, data.noisy)
    else:
        queries = data.noisy
    _freeze(lpr, False)
    order = np.random.default_rng(sub_seed(seed, "order", plan.epoch)).permutation(len(data))
    rng_aug = np.random.default_rng(sub_seed(seed, "augment", plan.epoch))
    rng_mine = np.random.default_rng(sub_seed(seed, "mining", plan.epoch))
    total_sum, used, skipped = 0.0, 0, 0
    steps: list[dict] = []
    for step_idx, pos in enumerate(order):
        batch = mine_triplet(data, int(pos), queries[pos], lpr, cfg, rng_mine)
        if batch is None:
            skipped += 1
            continue
        members = crop_and_flip(
            [batch.query, batch.positive, *batch.negatives],
            cfg.crop, cfg.flip_prob, rng_aug,
        )
        descs = lpr(torch.stack(members))
        loss = triplet_loss(descs[0], descs[1], list(descs[2:]), margin=cfg.margin)
        _check_finite(loss, {"epoch": plan.epoch, "module": "lpr", "sample": int(pos)},
                      out_dir, ldr, lpr)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        total_sum += float(loss.detach())
        used += 1
        steps.append({"step": step_idx, "epoch": plan.epoch, "module": "lpr",
                      "triplet": float(loss.detach())})
    if used == 0:
        raise DataError("no triplets could be mined this epoch")
    return {"triplet": total_sum / used, "loss": total_sum / used,
            "n_samples": used, "n_skipped": skipped, "steps": steps}


@dataclass
class TrainResult:
    ldr: RestorationNet | None
    lpr: DescriptorNet
    log: list[dict] = field(default_factory=list)


def train(
    data: ScanSet,
    cfg: TrainConfig,
    ldr_cfg: RestorationConfig,
    lpr_cfg: DescriptorConfig,
    strategy: str = "union",
    seed: int = 0,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run one full training according to the strategy's schedule.

    The returned log holds one record per epoch (including idle epochs)
    with losses, lr, consistency weight, and parameter hashes. With
    ``out_dir`` set, periodic checkpoints and non-finite-loss diagnostics
    are written there.
    """
    if data.noisy is None:
        raise DataError("training requires a ScanSet with degraded scans")
    plan = schedule_plan(cfg, strategy)

    torch.manual_seed(sub_seed(seed, "init"))
    ldr = None if strategy == "direct" else RestorationNet(ldr_cfg)
    lpr = DescriptorNet(lpr_cfg)

    opts = {"lpr": torch.optim.AdamW(lpr.parameters(), lr=cfg.lr_lpr,
                                     weight_decay=cfg.weight_decay)}
    if ldr is not None:
        opts["ldr"] = torch.optim.AdamW(ldr.parameters(), lr=cfg.lr_ldr,
                                        weight_decay=cfg.weight_decay)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")

    log: list[dict] = []
    try:
        for step in plan:
            if step.module is None:
                stats = {"n_samples": 0, "n_skipped": 0}
            elif step.module == "ldr":
                _set_lr(opts["ldr"], step.lr)
                stats = _ldr_epoch(data, ldr, lpr, opts["ldr"], step, cfg, seed, out_dir)
            else:
                _set_lr(opts["lpr"], step.lr)
                stats = _lpr_epoch(data, ldr, lpr, opts["lpr"], step, cfg, seed, out_dir)
            step_records = stats.pop("steps", [])
            record = {
                "epoch": step.epoch,
                "module": step.module,
                "ordinal": step.ordinal,
                "lr": step.lr,
                "lambda": step.lam,
                **stats,
                "ldr_hash": parameter_hash(ldr) if ldr is not None else None,
                "lpr_hash": parameter_hash(lpr),
            }
            log.append(record)
            if log_file is not None:
                for line in step_records:
                    log_file.write(json.dumps(line) + "\n")
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if (
                out_dir is not None
                and cfg.checkpoint_every > 0
                and step.epoch % cfg.checkpoint_every == 0
            ):
                if ldr is not None:
                    save_checkpoint(out_dir / f"ldr_epoch{step.epoch:03d}.npz", ldr)
                save_checkpoint(out_dir / f"lpr_epoch{step.epoch:03d}.npz", lpr)
    finally:
        if log_file is not None:
            log_file.close()

    if ldr is not None:
        ldr.eval()
    lpr.eval()
    return TrainResult(ldr=ldr, lpr=lpr, log=log)
