"""Restoration network: a three-stage U-Net whose blocks alternate gated
frequency-domain mixing and depthwise spatial mixing, with a globally pooled
template generator injected at the bottleneck.

The network maps a degraded (distance, intensity) range image, scaled to
network units (distance / max_range), to a restored one of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError
from .common import ChannelLayerNorm, ConvFFN, pad_to_multiple


@dataclass(frozen=True)
class RestorationConfig:
    base_channels: int = 32
    kernel_sizes: tuple[int, int, int] = (3, 5, 7)
    sag_scales: tuple[int, ...] = (1, 2, 4)
    sag_params_per_scale: int = 4
    enable_ddm: bool = True
    enable_sag: bool = True

    def __post_init__(self) -> None:
        if self.base_channels < 1:
            raise ConfigurationError("base_channels must be >= 1")
        if len(self.kernel_sizes) != 3:
            raise ConfigurationError("exactly three encoder kernel sizes required")
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigurationError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.sag_params_per_scale < 1:
            raise ConfigurationError("sag_params_per_scale must be >= 1")
        if any(s < 1 for s in self.sag_scales):
            raise ConfigurationError("sag scales must be >= 1")


class FrequencyMixer(nn.Module):
    """Sigmoid-gated spectral modulation with a residual path.

    FFT (orthonormal) -> concat(real, imag) -> 1x1 conv -> sigmoid gate ->
    elementwise gating of the spectrum -> inverse FFT -> + residual. The
    residual defaults to the input; a block may pass its own pre-norm input
    instead so the skip bypasses the normalization. With the gate forced to
    all ones the module returns exactly 2x its input.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.gate = nn.Conv2d(2 * channels, 2 * channels, 1)

    def forward(self, x: torch.Tensor,
                residual: torch.Tensor | None = None) -> torch.Tensor:
        spec = torch.fft.fft2(x, norm="ortho")
        gates = torch.sigmoid(self.gate(torch.cat([spec.real, spec.imag], dim=1)))
        gr, gi = gates.chunk(2, dim=1)
        modulated = torch.complex(gr * spec.real, gi * spec.imag)
        out = torch.fft.ifft2(modulated, norm="ortho").real
        return out + (x if residual is None else residual)


class SpatialMixer(nn.Module):
    """Two residual layers of GELU(pointwise(GELU(depthwise(x)))) + x."""

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.layers = nn.ModuleList()
        for _ in range(2):
            self.layers.append(nn.ModuleDict({
                "dw": nn.Conv2d(channels, channels, kernel_size,
                                padding=kernel_size // 2, groups=channels),
                "pw": nn.Conv2d(channels, channels, 1),
            }))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = F.gelu(layer["pw"](F.gelu(layer["dw"](x)))) + x
        return x


class DualDomainBlock(nn.Module):
    """Alternating frequency/spatial mixing with a feed-forward tail.

    x1 = x  + FMX(LN(x)); x2 = x1 + SMX(x1); x3 = x2 + FMX(x2);
    x4 = x3 + SMX(x3);    out = x4 + FFN(LN(x4))

    The mixer residuals are the additions written above: the first FMX skips
    around the normalization (its residual is the pre-norm input), the second
    FMX and both SMX stages carry their own input forward internally, and the
    FFN adds onto the chain output. With every weight at zero and the spectral
    gates saturated closed the block is an exact identity.
    """

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.norm1 = ChannelLayerNorm(channels)
        self.fmx1 = FrequencyMixer(channels)
        self.smx1 = SpatialMixer(channels, kernel_size)
        self.fmx2 = FrequencyMixer(channels)
        self.smx2 = SpatialMixer(channels, kernel_size)
        self.norm2 = ChannelLayerNorm(channels)
        self.ffn = ConvFFN(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.fmx1(self.norm1(x), residual=x)
        x = self.smx1(x)
        x = self.fmx2(x)
        x = self.smx2(x)
        return x + self.ffn(self.norm2(x))


class SemanticGenerator(nn.Module):
    """Content-conditioned map built from learnable multi-scale templates.

    The input is globally average-pooled to a context vector; per scale, a
    linear head softmax-weights that scale's N template maps; the weighted
    maps are bilinearly resized to the input resolution, summed over scales,
    and passed through a 3x3 conv.
    """

    def __init__(self, channels: int, scales: tuple[int, ...] = (1, 2, 4), n_params: int = 4):
        super().__init__()
        self.scales = tuple(scales)
        self.templates = nn.ParameterList(
            nn.Parameter(torch.randn(n_params, channels, s, s) * 0.02) for s in self.scales)
        self.heads = nn.ModuleList(nn.Linear(channels, n_params) for _ in self.scales)
        self.out = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if any(s > h or s > w for s in self.scales):
            raise ConfigurationError(
                f"template scale exceeds input resolution {h}x{w}: {self.scales}")
        context = x.mean(dim=(-2, -1))
        acc = None
        for templates, head, s in zip(self.templates, self.heads, self.scales):
            weights = torch.softmax(head(context), dim=-1)
            mixed = torch.einsum("bn,nchw->bchw", weights, templates)
            if s != h or s != w:
                mixed = F.interpolate(mixed, size=(h, w), mode="bilinear", align_corners=False)
            acc = mixed if acc is None else acc + mixed
        return self.out(acc)


def _block(channels: int, kernel_size: int, enabled: bool) -> nn.Module:
    return DualDomainBlock(channels, kernel_size) if enabled else nn.Identity()


class RestorationNet(nn.Module):
    """Encoder-decoder restorer; input and output are (B, 2, H, W)."""

    def __init__(self, cfg: RestorationConfig | None = None):
        super().__init__()
        cfg = cfg or RestorationConfig()
        self.cfg = cfg
        c = cfg.base_channels
        k1, k2, k3 = cfg.kernel_sizes
        widths = (c, 2 * c, 4 * c, 8 * c)

        self.stem = nn.Conv2d(2, c, 3, padding=1)
        self.enc1 = _block(widths[0], k1, cfg.enable_ddm)
        self.down1 = nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1)
        self.enc2 = _block(widths[1], k2, cfg.enable_ddm)
        self.down2 = nn.Conv2d(widths[1], widths[2], 3, stride=2, padding=1)
        self.enc3 = _block(widths[2], k3, cfg.enable_ddm)
        self.down3 = nn.Conv2d(widths[2], widths[3], 3, stride=2, padding=1)
        self.bottleneck = _block(widths[3], k3, cfg.enable_ddm)
        self.sag = (SemanticGenerator(widths[3], cfg.sag_scales, cfg.sag_params_per_scale)
                    if cfg.enable_sag else None)

        self.up3 = nn.Conv2d(widths[3], widths[2], 3, padding=1)
        self.fuse3 = nn.Conv2d(2 * widths[2], widths[2], 1)
        self.dec3 = _block(widths[2], k3, cfg.enable_ddm)
        self.up2 = nn.Conv2d(widths[2], widths[1], 3, padding=1)
        self.fuse2 = nn.Conv2d(2 * widths[1], widths[1], 1)
        self.dec2 = _block(widths[1], k2, cfg.enable_ddm)
        self.up1 = nn.Conv2d(widths[1], widths[0], 3, padding=1)
        self.fuse1 = nn.Conv2d(2 * widths[0], widths[0], 1)
        self.dec1 = _block(widths[0], k1, cfg.enable_ddm)
        self.head = nn.Conv2d(c, 2, 3, padding=1)

    @staticmethod
    def _upsample(x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor, return_latent: bool = False):
        h, w = x.shape[-2:]
        x = pad_to_multiple(x, 8, 8)

        e1 = self.enc1(self.stem(x))
        e2 = self.enc2(self.down1(e1))
        e3 = self.enc3(self.down2(e2))
        latent = self.bottleneck(self.down3(e3))
        if self.sag is not None:
            latent = latent + self.sag(latent)

        d3 = self.dec3(self.fuse3(torch.cat([self.up3(self._upsample(latent)), e3], dim=1)))
        d2 = self.dec2(self.fuse2(torch.cat([self.up2(self._upsample(d3)), e2], dim=1)))
        d1 = self.dec1(self.fuse1(torch.cat([self.up1(self._upsample(d2)), e1], dim=1)))
        out = self.head(d1)[:, :, :h, :w]
        if return_latent:
            return out, latent
        return out
