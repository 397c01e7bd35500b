"""Small building blocks shared by the restoration and descriptor networks."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel dimension of an NCHW tensor."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, x.shape[-1:], self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


class ConvFFN(nn.Module):
    """Pointwise-conv feed-forward with GELU, expansion ratio 2."""

    def __init__(self, channels: int, expansion: int = 2):
        super().__init__()
        hidden = channels * expansion
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


def pad_to_multiple(x: torch.Tensor, mh: int, mw: int, mode: str = "reflect") -> torch.Tensor:
    """Pad the bottom/right of an NCHW tensor so H % mh == 0 and W % mw == 0."""
    h, w = x.shape[-2:]
    ph = (mh - h % mh) % mh
    pw = (mw - w % mw) % mw
    if ph == 0 and pw == 0:
        return x
    # Reflection padding needs pad < dim; fall back to replicate for tiny maps.
    if mode == "reflect" and (ph >= h or pw >= w):
        mode = "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


def window_partition(x: torch.Tensor, wh: int, ww: int) -> torch.Tensor:
    """(B, C, H, W) -> (B * nWindows, wh * ww, C) token windows."""
    b, c, h, w = x.shape
    x = x.view(b, c, h // wh, wh, w // ww, ww)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(-1, wh * ww, c)


def window_merge(tokens: torch.Tensor, wh: int, ww: int, b: int, c: int, h: int, w: int) -> torch.Tensor:
    """Inverse of window_partition."""
    x = tokens.view(b, h // wh, w // ww, wh, ww, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, h, w)


class WindowAttention(nn.Module):
    """Multi-head self-attention over non-overlapping spatial windows.

    Window dims that are zero or exceed the input are clamped to the input
    extent, so (1, 0) means full-width row attention. Inputs are zero-padded
    to window multiples and cropped after merging.
    """

    def __init__(self, channels: int, window: tuple[int, int], heads: int):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.window = window
        self.heads = heads
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels, bias=False)
        self.proj = nn.Linear(channels, channels)
        self.record_attention = False
        self.last_attention: torch.Tensor | None = None

    def effective_window(self, h: int, w: int) -> tuple[int, int]:
        wh, ww = self.window
        wh = h if wh <= 0 else min(wh, h)
        ww = w if ww <= 0 else min(ww, w)
        return wh, ww

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        wh, ww = self.effective_window(h, w)
        xp = pad_to_multiple(x, wh, ww, mode="constant")
        hp, wp = xp.shape[-2:]

        tokens = window_partition(xp, wh, ww)
        n = tokens.shape[1]
        hd = c // self.heads

        def _split(t: torch.Tensor) -> torch.Tensor:
            return t.view(-1, n, self.heads, hd).transpose(1, 2)

        q, k, v = _split(self.q(tokens)), _split(self.k(tokens)), _split(self.v(tokens))
        attn = torch.softmax(q @ k.transpose(-2, -1) * hd ** -0.5, dim=-1)
        if self.record_attention:
            self.last_attention = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(-1, n, c)
        out = self.proj(out)
        out = window_merge(out, wh, ww, b, c, hp, wp)
        return out[:, :, :h, :w]
