"""Shared fixtures and the finite-difference gradient oracle.

The gradient checker perturbs every parameter (and the input) of a module
at 64-bit precision and compares central differences of a scalar probe
f(theta) = <module(x), u> against autograd. Relative error is measured per
tensor: max-abs difference over max(max|analytic|, max|numeric|, 1e-6), so
one noisy near-zero element cannot dominate a healthy tensor.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def fd_gradcheck(
    module: torch.nn.Module,
    x: torch.Tensor,
    h: float = 1e-5,
    max_elems: int | None = None,
    seed: int = 0,
    check_input: bool = True,
) -> float:
    """Worst per-tensor relative error between autograd and central FD.

    Args:
        module: network or block; converted to float64 in place.
        x: input tensor (converted to float64).
        h: central-difference step. At 64-bit precision 1e-5 keeps the h^2
            truncation term below 1e-7 even through layer norms, whose
            input curvature dominates at coarser steps, while rounding
            noise stays near 1e-10.
        max_elems: cap on probed elements per tensor (None = all).
        seed: seed for the probe direction and element subsampling.
        check_input: also verify the gradient w.r.t. x.
    """
    module = module.double()
    module.eval()
    x = x.detach().double().requires_grad_(True)

    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        u = torch.randn(module(x).shape, generator=gen, dtype=torch.float64)

    def f() -> torch.Tensor:
        return (module(x) * u).sum()

    module.zero_grad(set_to_none=True)
    if x.grad is not None:
        x.grad = None
    f().backward()

    tensors: list[tuple[str, torch.Tensor]] = list(module.named_parameters())
    if check_input:
        tensors.append(("input", x))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor in tensors:
        if tensor.grad is None:
            continue
        flat = tensor.data.reshape(-1)
        grad = tensor.grad.reshape(-1)
        n = flat.numel()
        idxs = np.arange(n)
        if max_elems is not None and n > max_elems:
            idxs = np.sort(rng.choice(n, size=max_elems, replace=False))
        analytic = np.empty(len(idxs))
        numeric = np.empty(len(idxs))
        with torch.no_grad():
            for j, i in enumerate(idxs):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(f())
                flat[i] = orig - h
                f_minus = float(f())
                flat[i] = orig
                numeric[j] = (f_plus - f_minus) / (2.0 * h)
                analytic[j] = grad[i].item()
        worst = max(worst, relative_error(analytic, numeric))
    return worst


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
