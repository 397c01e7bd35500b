"""Training objectives: reconstruction, descriptor-distillation KL, their
weighted combination, and the retrieval triplet loss.

All functions take torch tensors and stay differentiable; reduction
conventions are pinned by the unit tests.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DataError


def rec_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over pixels of |d - d_hat| + |i - i_hat|, all pixels counted.

    Inputs are (..., 2, H, W); the channel absolute differences are summed,
    then averaged over every pixel (and any leading batch dims).
    """
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().sum(dim=-3).mean()


def ltd_loss(desc_restored: torch.Tensor, desc_clean: torch.Tensor,
             tau: float = 1.0) -> torch.Tensor:
    """KL(softmax(restored / tau) || softmax(clean / tau)).

    The clean descriptor is treated as a constant target: no gradient flows
    into it. Computed over the descriptor dimension; batch dims averaged.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    if desc_restored.shape != desc_clean.shape:
        raise DataError("descriptor shape mismatch")
    log_p = F.log_softmax(desc_restored / tau, dim=-1)
    log_q = F.log_softmax(desc_clean.detach() / tau, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    return kl.mean()


def ldr_loss(pred: torch.Tensor, gt: torch.Tensor,
             desc_restored: torch.Tensor | None, desc_clean: torch.Tensor | None,
             lam: float, tau: float = 1.0) -> tuple[torch.Tensor, dict[str, float]]:
    """rec + lam * ltd, with the components reported for logging.

    With lam == 0 the descriptor terms may be None and the result equals
    rec_loss exactly.
    """
    rec = rec_loss(pred, gt.detach())
    if lam == 0.0 or desc_restored is None:
        total = rec
        components = {"rec": float(rec.detach()), "ltd": 0.0, "lambda": lam}
    else:
        ltd = ltd_loss(desc_restored, desc_clean, tau)
        total = rec + lam * ltd
        components = {"rec": float(rec.detach()), "ltd": float(ltd.detach()), "lambda": lam}
    return total, components


def triplet_loss(query: torch.Tensor, positive: torch.Tensor,
                 negatives: list[torch.Tensor] | torch.Tensor,
                 margin: float) -> torch.Tensor:
    """(1/N) sum_i max(0, d(q, p) - d(q, n_i) + margin), Euclidean d."""
    if margin <= 0:
        raise ConfigurationError(f"margin must be positive, got {margin}")
    if isinstance(negatives, torch.Tensor) and negatives.dim() == query.dim():
        negatives = [negatives]
    negatives = list(negatives)
    if len(negatives) == 0:
        raise DataError("triplet loss needs at least one negative")
    d_pos = torch.linalg.vector_norm(query - positive)
    hinges = [torch.relu(d_pos - torch.linalg.vector_norm(query - n) + margin)
              for n in negatives]
    return torch.stack(hinges).mean()
