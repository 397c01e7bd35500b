"""Descriptor network: conv stem, one row-attention transformer block, a
two-level Haar pyramid, per-scale wavelet window attention, and NetVLAD
aggregation fused into a single unit-norm global descriptor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError
from .common import ChannelLayerNorm, ConvFFN, WindowAttention, pad_to_multiple


class WaveletBands(NamedTuple):
    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def dwt2(x: torch.Tensor) -> WaveletBands:
    """Single-level orthonormal 2D Haar decomposition of an NCHW tensor.

    LH carries horizontal detail (high-pass along width), HL vertical detail.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"dwt2 requires even spatial dims, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    lh = (-a + b - c + d) / 2
    hl = (-a - b + c + d) / 2
    hh = (a - b - c + d) / 2
    return WaveletBands(ll, lh, hl, hh)


def idwt2(bands: WaveletBands) -> torch.Tensor:
    """Exact inverse of dwt2."""
    ll, lh, hl, hh = bands
    a = (ll - lh - hl + hh) / 2
    b = (ll + lh - hl - hh) / 2
    c = (ll - lh + hl - hh) / 2
    d = (ll + lh + hl + hh) / 2
    bsz, ch, hh_, ww_ = ll.shape
    out = ll.new_zeros((bsz, ch, hh_ * 2, ww_ * 2))
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


@dataclass(frozen=True)
class DescriptorConfig:
    base_channels: int = 32
    heads: int = 4
    clusters: int = 32
    descriptor_dim: int = 256
    window_ll: tuple[int, int] = (8, 8)
    window_lh: tuple[int, int] = (4, 16)
    window_hl: tuple[int, int] = (16, 4)
    window_hh: tuple[int, int] = (4, 4)

    def __post_init__(self) -> None:
        if self.base_channels < 1 or self.descriptor_dim < 1:
            raise ConfigurationError("channel and descriptor dims must be >= 1")
        if self.heads < 1 or self.base_channels % self.heads != 0:
            raise ConfigurationError(
                f"base_channels {self.base_channels} must divide by heads {self.heads}")
        if self.clusters < 2:
            raise ConfigurationError("need at least 2 NetVLAD clusters")
        for win in (self.window_ll, self.window_lh, self.window_hl, self.window_hh):
            if len(win) != 2 or any(v < 1 for v in win):
                raise ConfigurationError(f"window dims must be positive pairs, got {win}")


class WaveletWindowAttention(nn.Module):
    """Per-sub-band window attention in the Haar domain with a residual path.

    The input is decomposed, each band refined by band + attention(band) with
    its own projections and window shape, reconstructed, and added to the
    input. With value/output projections zeroed this reduces to exactly 2x
    the input (perfect reconstruction plus residual).
    """

    BANDS = ("ll", "lh", "hl", "hh")

    def __init__(self, channels: int, heads: int, windows: dict[str, tuple[int, int]]):
        super().__init__()
        self.attn = nn.ModuleDict({
            name: WindowAttention(channels, windows[name], heads) for name in self.BANDS})

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        xp = pad_to_multiple(x, 2, 2)
        bands = dwt2(xp)
        refined = WaveletBands(*(band + self.attn[name](band)
                                 for name, band in zip(self.BANDS, bands)))
        return idwt2(refined)[:, :, :h, :w] + x


class WaveletTransformerBlock(nn.Module):
    """Wavelet window attention followed by a pre-LN feed-forward tail."""

    def __init__(self, channels: int, heads: int, windows: dict[str, tuple[int, int]]):
        super().__init__()
        self.attn = WaveletWindowAttention(channels, heads, windows)
        self.norm = ChannelLayerNorm(channels)
        self.ffn = ConvFFN(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.attn(x)
        return x + self.ffn(self.norm(x))


class NetVLAD(nn.Module):
    """Soft-assigned VLAD aggregation over spatial locations.

    Each location's feature is softly assigned to K learnable centers; the
    assignment-weighted residuals are accumulated per cluster, intra-
    normalized, flattened, and L2-normalized. The result is invariant to any
    permutation of spatial locations.
    """

    def __init__(self, channels: int, clusters: int):
        super().__init__()
        self.assign = nn.Conv2d(channels, clusters, 1)
        self.centers = nn.Parameter(torch.randn(clusters, channels) * 0.1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        soft = torch.softmax(self.assign(x), dim=1).reshape(b, -1, h * w)
        feats = x.reshape(b, c, h * w)
        vlad = torch.einsum("bkn,bcn->bkc", soft, feats)
        vlad = vlad - soft.sum(dim=-1, keepdim=True) * self.centers
        vlad = F.normalize(vlad, dim=2)
        return F.normalize(vlad.flatten(1), dim=1)


class RowTransformerBlock(nn.Module):
    """Standard pre-LN transformer block with full-width row attention."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.norm1 = ChannelLayerNorm(channels)
        self.attn = WindowAttention(channels, (1, 0), heads)  # (1, 0) = full rows
        self.norm2 = ChannelLayerNorm(channels)
        self.ffn = ConvFFN(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class PyramidVLADHead(nn.Module):
    """Per-scale wavelet transformer + NetVLAD, fused by projection, LayerNorm,
    context gating, and L2 normalization."""

    LEVELS = 3

    def __init__(self, cfg: DescriptorConfig):
        super().__init__()
        windows = {"ll": cfg.window_ll, "lh": cfg.window_lh,
                   "hl": cfg.window_hl, "hh": cfg.window_hh}
        c = cfg.base_channels
        self.mft = nn.ModuleList(
            WaveletTransformerBlock(c, cfg.heads, windows) for _ in range(self.LEVELS))
        self.vlad = nn.ModuleList(NetVLAD(c, cfg.clusters) for _ in range(self.LEVELS))
        self.proj = nn.Linear(self.LEVELS * cfg.clusters * c, cfg.descriptor_dim)
        self.norm = nn.LayerNorm(cfg.descriptor_dim)
        self.gate = nn.Linear(cfg.descriptor_dim, cfg.descriptor_dim)

    def forward(self, levels: list[torch.Tensor]) -> torch.Tensor:
        if len(levels) != self.LEVELS:
            raise ConfigurationError(f"expected {self.LEVELS} pyramid levels, got {len(levels)}")
        pooled = [vlad(mft(lvl)) for mft, vlad, lvl in zip(self.mft, self.vlad, levels)]
        x = self.norm(self.proj(torch.cat(pooled, dim=1)))
        x = x * torch.sigmoid(self.gate(x))
        return F.normalize(x, dim=1)


class DescriptorNet(nn.Module):
    """Range image (B, 2, H, W) -> unit-norm global descriptor (B, D)."""

    def __init__(self, cfg: DescriptorConfig | None = None):
        super().__init__()
        cfg = cfg or DescriptorConfig()
        self.cfg = cfg
        c = cfg.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(2, c, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(c, c, 3, stride=2, padding=1),
        )
        self.encoder = RowTransformerBlock(c, cfg.heads)
        self.head = PyramidVLADHead(cfg)

    def pyramid(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Scales {full, 1/2, 1/4} by repeated LL extraction."""
        levels = [x]
        for _ in range(2):
            x = dwt2(pad_to_multiple(x, 2, 2)).ll
            levels.append(x)
        return levels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(self.stem(x))
        return self.head(self.pyramid(feats))
