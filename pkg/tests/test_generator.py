import numpy as np
import pytest
import torch

from crackseg.attention import AttentionConfig
from crackseg.checkpoint import load_checkpoint, save_checkpoint
from crackseg.errors import ConfigError
from crackseg.generator import Generator, GeneratorSpec, build_generator
from crackseg.introspect import count_kind, layer_manifest, manifest_params

from .conftest import max_rel_error


def small_spec(kind="cbam", base_width=8, **attn_kwargs):
    return GeneratorSpec(base_width=base_width, attention=AttentionConfig(kind=kind, **attn_kwargs))


def analytic_core_params(base_width, in_channels=3, out_channels=1):
    """Hand count of the UNet body from first principles: conv weights+bias
    plus the two affine parameters per batch-norm channel."""
    w = [base_width * 2**i for i in range(5)]
    conv = lambda cin, cout, k: k * k * cin * cout + cout
    bn = lambda c: 2 * c
    total = 0
    cin = in_channels
    for width in w:  # encoder: two 3x3 convs + BN each per level
        total += conv(cin, width, 3) + bn(width) + conv(width, width, 3) + bn(width)
        cin = width
    for level in range(3, -1, -1):  # decoder: up conv + two convs, BN each
        total += conv(w[level + 1], w[level], 3) + bn(w[level])
        total += conv(2 * w[level], w[level], 3) + bn(w[level])
        total += conv(w[level], w[level], 3) + bn(w[level])
    total += conv(w[0], out_channels, 1)  # final 1x1 (finest side map)
    return total


def analytic_head_params(base_width, out_channels=1):
    w = [base_width * 2**i for i in range(5)]
    side = sum(w[level] * out_channels + out_channels for level in (3, 2, 1))
    fuse = 4 * out_channels * out_channels + out_channels
    return side + fuse


class TestBuild:
    def test_core_conv_count_is_23(self):
        net = build_generator(small_spec())
        manifest = layer_manifest(net, (3, 32, 32))
        assert count_kind(manifest, "conv", tag="core") == 23

    def test_head_conv_counts(self):
        net = build_generator(small_spec())
        manifest = layer_manifest(net, (3, 32, 32))
        assert count_kind(manifest, "conv", tag="side") == 3
        assert count_kind(manifest, "conv", tag="fuse") == 1

    def test_param_count_matches_analytic_hand_count(self):
        spec = GeneratorSpec(base_width=32, attention=AttentionConfig(kind="none"))
        net = build_generator(spec)
        expected = analytic_core_params(32) + analytic_head_params(32)
        manifest = layer_manifest(net, (3, 32, 32))
        assert manifest_params(manifest) == expected
        assert sum(p.numel() for p in net.parameters()) == expected

    def test_same_seed_identical_first_forward(self):
        x = torch.rand(1, 3, 32, 32)
        a = build_generator(small_spec(), seed=9)(x.clone())
        b = build_generator(small_spec(), seed=9)(x.clone())
        torch.testing.assert_close(a.fused, b.fused, rtol=0, atol=0)

    def test_different_seed_differs(self):
        x = torch.rand(1, 3, 32, 32)
        a = build_generator(small_spec(), seed=1)(x.clone())
        b = build_generator(small_spec(), seed=2)(x.clone())
        assert not torch.equal(a.fused, b.fused)

    def test_depth_fixed_at_four(self):
        with pytest.raises(ConfigError):
            GeneratorSpec(depth=3)


class TestForward:
    @pytest.mark.parametrize("size", [64, 96, 128])
    def test_five_maps_input_sized_in_unit_interval(self, size):
        net = build_generator(small_spec())
        out = net(torch.rand(2, 3, size, size))
        maps = (out.fused,) + out.sides
        assert len(out.sides) == 4
        for m in maps:
            assert m.shape == (2, 1, size, size)
            assert 0 < m.min() and m.max() < 1

    def test_zero_input_finite_in_train_mode(self):
        net = build_generator(small_spec())
        net.train()
        out = net(torch.zeros(2, 3, 32, 32))
        assert torch.isfinite(out.fused).all()
        assert all(torch.isfinite(s).all() for s in out.sides)

    def test_indivisible_height_names_axis(self):
        net = build_generator(small_spec())
        with pytest.raises(ValueError, match="height 40"):
            net(torch.rand(1, 3, 40, 32))
        with pytest.raises(ValueError, match="width 40"):
            net(torch.rand(1, 3, 32, 40))

    def test_identity_attention_preserves_shapes(self):
        net = build_generator(small_spec(kind="none"))
        out = net(torch.rand(1, 3, 64, 64))
        assert out.fused.shape == (1, 1, 64, 64)
        assert all(s.shape == (1, 1, 64, 64) for s in out.sides)

    @pytest.mark.parametrize("kind", ["cbam", "cbam_ignore", "lsa"])
    def test_all_attention_kinds_forward(self, kind):
        net = build_generator(small_spec(kind=kind, lsa_window=4))
        out = net(torch.rand(1, 3, 64, 64))
        assert out.fused.shape == (1, 1, 64, 64)


class TestGradientProbe:
    def test_ten_random_parameters_match_finite_differences(self):
        torch.manual_seed(21)
        net = build_generator(small_spec(base_width=4), seed=21).double()
        net.eval()  # frozen statistics make the probe a pure function
        x = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        target = torch.rand(1, 1, 32, 32, dtype=torch.float64)

        def loss():
            return ((net(x).fused - target) ** 2).sum()

        net.zero_grad()
        loss().backward()
        params = [p for p in net.parameters() if p.grad is not None]
        rng = np.random.default_rng(22)
        h = 1e-5
        numeric_probe, analytic_probe = [], []
        for _ in range(10):
            p = params[rng.integers(len(params))]
            flat = p.detach().reshape(-1)
            i = int(rng.integers(flat.numel()))
            analytic_probe.append(p.grad.reshape(-1)[i].item())
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                up = loss().item()
                flat[i] = orig - h
                down = loss().item()
                flat[i] = orig
            numeric_probe.append((up - down) / (2 * h))
        # Probe compared as a vector so near-zero entries do not dominate.
        numeric = np.array(numeric_probe)
        analytic = np.array(analytic_probe)
        scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
        assert np.abs(numeric - analytic).max() / scale <= 1e-5


class TestCheckpoint:
    def test_round_trip_identical_forward(self, tmp_path):
        net = build_generator(small_spec(kind="cbam_ignore"), seed=3)
        x = torch.rand(1, 3, 32, 32)
        net.eval()
        before = net(x).fused
        path = save_checkpoint(tmp_path / "gen.pt", net, iteration=7, input_size=(3, 32, 32))
        assert (tmp_path / "gen.pt.manifest.txt").exists()
        restored, payload = load_checkpoint(path)
        restored.eval()
        assert payload["iteration"] == 7 and payload["kind"] == "generator"
        torch.testing.assert_close(restored(x).fused, before, rtol=0, atol=0)

    def test_manifest_params_equal_parameter_blob_sum(self, tmp_path):
        net = build_generator(small_spec())
        manifest = layer_manifest(net, (3, 32, 32))
        assert manifest_params(manifest) == sum(p.numel() for p in net.parameters())
