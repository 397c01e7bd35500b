"""Restoration network tests.

The spectral mixer is checked against an explicit DFT-matrix reimplementation,
block identities against closed-form weight settings (saturated gates, zeroed
convolutions, bias-only layers), and every module's gradients against the
central-difference oracle in conftest.
"""

import math

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from conftest import fd_gradcheck
from rangeloop.errors import ConfigurationError
from rangeloop.nets.restoration import (
    DualDomainBlock,
    FrequencyMixer,
    RestorationConfig,
    RestorationNet,
    SemanticGenerator,
    SpatialMixer,
)


def dft_matrix(n: int) -> np.ndarray:
    """Orthonormal DFT matrix D[j, k] = exp(-2i pi j k / n) / sqrt(n)."""
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) / math.sqrt(n)


def gelu_exact(v: float) -> float:
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def randn(*shape, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=gen, dtype=dtype)


class TestFrequencyMixer:
    def test_saturated_open_gate_doubles_input(self):
        fmx = FrequencyMixer(3).double()
        with torch.no_grad():
            fmx.gate.weight.zero_()
            fmx.gate.bias.fill_(100.0)
        x = randn(2, 3, 6, 10, seed=1)
        assert (fmx(x) - 2.0 * x).abs().max().item() < 1e-12

    def test_saturated_closed_gate_returns_input(self):
        fmx = FrequencyMixer(3).double()
        with torch.no_grad():
            fmx.gate.weight.zero_()
            fmx.gate.bias.fill_(-100.0)
        x = randn(2, 3, 6, 10, seed=2)
        assert (fmx(x) - x).abs().max().item() < 1e-12

    def test_ungated_spectrum_inverts_to_input(self):
        # With the gate saturated open the non-residual path is the plain
        # orthonormal transform pair, which must reproduce the input.
        fmx = FrequencyMixer(2)
        with torch.no_grad():
            fmx.gate.weight.zero_()
            fmx.gate.bias.fill_(100.0)
        x = randn(1, 2, 16, 32, seed=3, dtype=torch.float32)
        roundtrip = fmx(x) - x
        assert (roundtrip - x).abs().max().item() < 1e-6

    def test_transform_matches_dft_matrices(self):
        x = randn(2, 3, 8, 8, seed=4)
        spec = torch.fft.fft2(x, norm="ortho").numpy()
        d = dft_matrix(8)
        expected = np.einsum("uk,bckl,vl->bcuv", d, x.numpy().astype(complex), d)
        assert np.abs(spec - expected).max() < 1e-12

    def test_forward_matches_matrix_reimplementation(self):
        torch.manual_seed(5)
        fmx = FrequencyMixer(4).double()
        x = randn(2, 4, 8, 8, seed=6)

        xd = x.numpy()
        b, c, h, w = xd.shape
        dh, dw = dft_matrix(h), dft_matrix(w)
        spec = np.einsum("uk,bckl,vl->bcuv", dh, xd.astype(complex), dw)
        weight = fmx.gate.weight.detach().numpy()[:, :, 0, 0]
        bias = fmx.gate.bias.detach().numpy()
        feats = np.concatenate([spec.real, spec.imag], axis=1)
        logits = np.einsum("oc,bchw->bohw", weight, feats) + bias[None, :, None, None]
        gates = 1.0 / (1.0 + np.exp(-logits))
        modulated = gates[:, :c] * spec.real + 1j * gates[:, c:] * spec.imag
        back = np.einsum("uk,bckl,vl->bcuv", dh.conj().T, modulated, dw.conj().T)
        expected = back.real + xd

        assert np.abs(fmx(x).detach().numpy() - expected).max() < 1e-10

    def test_explicit_residual_replaces_skip_path(self):
        fmx = FrequencyMixer(2).double()
        with torch.no_grad():
            fmx.gate.weight.zero_()
            fmx.gate.bias.fill_(-100.0)
        x = randn(1, 2, 4, 6, seed=7)
        r = randn(1, 2, 4, 6, seed=8)
        assert (fmx(x, residual=r) - r).abs().max().item() < 1e-12

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(9)
        err = fd_gradcheck(FrequencyMixer(2), randn(1, 2, 4, 8, seed=10))
        assert err < 1e-4


class TestSpatialMixer:
    def test_zero_weights_is_identity(self):
        smx = SpatialMixer(3, 3).double()
        with torch.no_grad():
            for p in smx.parameters():
                p.zero_()
        x = randn(2, 3, 5, 9, seed=11)
        assert torch.equal(smx(x), x)

    def test_bias_only_layers_add_known_constants(self):
        # Zero convolution weights reduce each layer to x + gelu(pw bias);
        # with biases 1 and 2 the mixer adds gelu(1) + gelu(2) everywhere.
        smx = SpatialMixer(1, 3).double()
        with torch.no_grad():
            for p in smx.parameters():
                p.zero_()
            smx.layers[0]["pw"].bias.fill_(1.0)
            smx.layers[1]["pw"].bias.fill_(2.0)
        x = randn(1, 1, 4, 6, seed=12)
        expected = x + gelu_exact(1.0) + gelu_exact(2.0)
        assert (smx(x) - expected).abs().max().item() < 1e-12

    def test_shape_preserved(self):
        smx = SpatialMixer(3, 5)
        x = torch.randn(2, 3, 5, 9)
        assert smx(x).shape == x.shape

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(13)
        err = fd_gradcheck(SpatialMixer(2, 3), randn(1, 2, 4, 8, seed=14))
        assert err < 1e-4


class TestDualDomainBlock:
    def test_zero_weights_closed_gates_is_identity(self):
        blk = DualDomainBlock(4, 3).double()
        with torch.no_grad():
            for p in blk.parameters():
                p.zero_()
            blk.fmx1.gate.bias.fill_(-100.0)
            blk.fmx2.gate.bias.fill_(-100.0)
        x = randn(2, 4, 8, 16, seed=15)
        assert (blk(x) - x).abs().max().item() < 1e-12

    def test_shape_preserved(self):
        blk = DualDomainBlock(3, 5)
        x = torch.randn(2, 3, 6, 10)
        assert blk(x).shape == x.shape

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(16)
        err = fd_gradcheck(DualDomainBlock(2, 3), randn(1, 2, 4, 8, seed=17))
        assert err < 1e-4


class TestSemanticGenerator:
    def test_single_scale_hand_computation(self):
        sag = SemanticGenerator(1, scales=(1,), n_params=2).double()
        with torch.no_grad():
            sag.templates[0].copy_(
                torch.tensor([2.0, -1.0], dtype=torch.float64).view(2, 1, 1, 1))
            sag.heads[0].weight.copy_(
                torch.tensor([[0.5], [-0.25]], dtype=torch.float64))
            sag.heads[0].bias.copy_(torch.tensor([0.1, 0.3], dtype=torch.float64))
            sag.out.weight.zero_()
            sag.out.weight[0, 0, 1, 1] = 1.0
            sag.out.bias.zero_()
        x = torch.tensor([[1.0, 3.0], [5.0, 7.0]], dtype=torch.float64).view(1, 1, 2, 2)

        # Pooled context 4.0 gives logits [2.1, -0.7]; the softmax mixture of
        # the scalar templates broadcasts to a constant map.
        z = math.exp(2.1) + math.exp(-0.7)
        expected = (math.exp(2.1) * 2.0 + math.exp(-0.7) * -1.0) / z
        out = sag(x)
        assert out.shape == (1, 1, 2, 2)
        assert (out - expected).abs().max().item() < 1e-12

    def test_zero_templates_give_input_independent_bias_map(self):
        torch.manual_seed(18)
        sag = SemanticGenerator(2, scales=(1, 2), n_params=3).double()
        with torch.no_grad():
            for t in sag.templates:
                t.zero_()
            sag.out.weight.zero_()
            sag.out.bias.copy_(torch.tensor([0.7, -0.2], dtype=torch.float64))
        a = sag(randn(1, 2, 4, 6, seed=19))
        b = sag(randn(1, 2, 4, 6, seed=20))
        expected = torch.tensor([0.7, -0.2], dtype=torch.float64).view(1, 2, 1, 1)
        assert torch.equal(a, b)
        assert (a - expected.expand_as(a)).abs().max().item() < 1e-12

    def test_identical_templates_make_mixture_weight_free(self):
        # When every template at a scale is the same map, the convex mixture
        # must return that map no matter what the head produces, so two
        # different inputs yield the same output.
        torch.manual_seed(21)
        sag = SemanticGenerator(2, scales=(2,), n_params=3).double()
        tmpl = randn(2, 2, 2, seed=22)
        with torch.no_grad():
            sag.templates[0].copy_(tmpl.unsqueeze(0).expand(3, -1, -1, -1))
            sag.out.weight.zero_()
            for ch in range(2):
                sag.out.weight[ch, ch, 1, 1] = 1.0
            sag.out.bias.zero_()
        a = sag(randn(1, 2, 4, 6, seed=23))
        b = sag(randn(1, 2, 4, 6, seed=24) * 3.0)
        expected = F.interpolate(tmpl.unsqueeze(0), size=(4, 6),
                                 mode="bilinear", align_corners=False)
        assert (a - b).abs().max().item() < 1e-12
        assert (a - expected).abs().max().item() < 1e-12

    def test_scale_larger_than_input_raises(self):
        sag = SemanticGenerator(1, scales=(1, 4), n_params=2)
        with pytest.raises(ConfigurationError):
            sag(torch.randn(1, 1, 2, 2))
        with pytest.raises(ConfigurationError):
            sag(torch.randn(1, 1, 8, 3))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(25)
        sag = SemanticGenerator(2, scales=(1, 2), n_params=2)
        err = fd_gradcheck(sag, randn(1, 2, 4, 6, seed=26))
        assert err < 1e-4


class TestRestorationConfig:
    @pytest.mark.parametrize("kwargs", [
        {"base_channels": 0},
        {"kernel_sizes": (3, 5)},
        {"kernel_sizes": (3, 4, 7)},
        {"sag_params_per_scale": 0},
        {"sag_scales": (0, 2)},
    ])
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            RestorationConfig(**kwargs)

    def test_defaults_are_valid(self):
        cfg = RestorationConfig()
        assert cfg.base_channels == 32
        assert cfg.kernel_sizes == (3, 5, 7)


class TestRestorationNet:
    def test_output_shape_matches_input(self):
        torch.manual_seed(27)
        net = RestorationNet(RestorationConfig(base_channels=4))
        x = torch.randn(2, 2, 32, 64)
        assert net(x).shape == (2, 2, 32, 64)

    def test_nonmultiple_sizes_are_padded_and_cropped(self):
        torch.manual_seed(28)
        net = RestorationNet(RestorationConfig(base_channels=4))
        x = torch.randn(1, 2, 30, 60)
        assert net(x).shape == (1, 2, 30, 60)

    def test_bottleneck_is_eighth_resolution_and_eightfold_width(self):
        torch.manual_seed(29)
        net = RestorationNet(RestorationConfig(base_channels=8))
        out, latent = net(torch.randn(1, 2, 32, 64), return_latent=True)
        assert out.shape == (1, 2, 32, 64)
        assert latent.shape == (1, 64, 4, 8)

    def test_blocks_and_generator_can_be_disabled(self):
        torch.manual_seed(30)
        net = RestorationNet(RestorationConfig(
            base_channels=4, enable_ddm=False, enable_sag=False))
        assert isinstance(net.enc1, nn.Identity)
        assert isinstance(net.bottleneck, nn.Identity)
        assert net.sag is None
        assert net(torch.randn(1, 2, 16, 32)).shape == (1, 2, 16, 32)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(31)
        net = RestorationNet(RestorationConfig(
            base_channels=2, sag_scales=(1, 2), sag_params_per_scale=2))
        err = fd_gradcheck(net, randn(1, 2, 16, 32, seed=32), max_elems=2)
        assert err < 1e-3
