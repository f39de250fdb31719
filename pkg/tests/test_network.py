"""Restoration network blocks: identities at init, shape contracts, and
scalar-loop oracle equivalence for the fusion gate and channel attention."""

import numpy as np
import pytest
import torch

from oracles import caff_reference, mdta_reference
from restora.network import (
    ChannelLayerNorm,
    ConcatFusion,
    ContextRestorer,
    Downsample,
    GatedFeedForward,
    ModulationBlock,
    RestorerConfig,
    SpatialCrossAttention,
    TOY_RESTORER,
    TransformerBlock,
    TransposedAttention,
    Upsample,
)
from restora.pipeline import build_model, toy_config

torch.manual_seed(0)


def toy_restorer_config(**overrides):
    return RestorerConfig(**{**TOY_RESTORER, "ctx_dim": 16, **overrides})


def _perturb(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(0.3 * torch.randn(p.shape, generator=g, dtype=p.dtype))


def _zero(module):
    with torch.no_grad():
        for p in module.parameters():
            torch.nn.init.zeros_(p)


class TestChannelLayerNorm:
    def test_normalizes_each_position(self):
        norm = ChannelLayerNorm(8).double()
        x = torch.randn(2, 8, 4, 4, dtype=torch.float64) * 3 + 1
        out = norm(x)
        assert torch.allclose(out.mean(dim=1), torch.zeros(2, 4, 4, dtype=torch.float64), atol=1e-10)
        assert torch.allclose(out.var(dim=1, unbiased=False),
                              torch.ones(2, 4, 4, dtype=torch.float64), atol=1e-4)

    def test_affine_params_apply(self):
        norm = ChannelLayerNorm(4).double()
        with torch.no_grad():
            norm.weight.fill_(2.0)
            norm.bias.fill_(0.5)
        x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
        base = (x - x.mean(1, keepdim=True)) / torch.sqrt(x.var(1, keepdim=True, unbiased=False) + 1e-5)
        assert torch.allclose(norm(x), base * 2.0 + 0.5)


class TestBasicBlock:
    @pytest.mark.parametrize("dim,heads", [(8, 1), (48, 4)])
    @pytest.mark.parametrize("side", [8, 16])
    def test_shape_preserved(self, dim, heads, side):
        block = TransformerBlock(dim, heads).double()
        x = torch.randn(1, dim, side, side, dtype=torch.float64)
        assert block(x).shape == x.shape

    def test_zero_output_convs_make_identity(self):
        block = TransformerBlock(8, 2).double()
        with torch.no_grad():
            torch.nn.init.zeros_(block.attn.project_out.weight)
            torch.nn.init.zeros_(block.ffn.project_out.weight)
        x = torch.randn(2, 8, 6, 6, dtype=torch.float64)
        assert torch.equal(block(x), x)

    def test_attention_head_count_must_divide(self):
        with pytest.raises(ValueError):
            TransposedAttention(6, 4)

    def test_ffn_hidden_width(self):
        ffn = GatedFeedForward(48, expansion=2.66)
        assert ffn.project_in.out_channels == 2 * int(48 * 2.66)
        assert ffn.project_out.in_channels == int(48 * 2.66)


class TestMDTAOracle:
    def test_matches_scalar_reference_on_20_instances(self):
        for i in range(20):
            torch.manual_seed(100 + i)
            attn = TransposedAttention(4, 2).double()
            _perturb(attn, seed=200 + i)
            x = torch.randn(1, 4, 3, 3, dtype=torch.float64)
            got = attn(x)[0].detach().numpy()
            want = mdta_reference(attn, x[0].numpy())
            assert np.abs(got - want).max() < 1e-9

    def test_single_head_variant(self):
        torch.manual_seed(3)
        attn = TransposedAttention(3, 1).double()
        x = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        got = attn(x)[0].detach().numpy()
        want = mdta_reference(attn, x[0].numpy())
        assert np.abs(got - want).max() < 1e-9


class TestSpatialCrossAttention:
    def test_zero_out_projection_is_identity(self):
        cross = SpatialCrossAttention(8, 16, 2).double()
        with torch.no_grad():
            torch.nn.init.zeros_(cross.to_out.weight)
            torch.nn.init.zeros_(cross.to_out.bias)
        x = torch.randn(2, 8, 5, 5, dtype=torch.float64)
        ctx = torch.randn(2, 6, 16, dtype=torch.float64)
        assert torch.equal(cross(x, ctx), x)

    def test_key_permutation_invariance(self):
        cross = SpatialCrossAttention(8, 16, 2).double()
        _perturb(cross, seed=11)
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        ctx = torch.randn(1, 7, 16, dtype=torch.float64)
        perm = torch.randperm(7, generator=torch.Generator().manual_seed(5))
        a = cross(x, ctx)
        b = cross(x, ctx[:, perm])
        assert torch.allclose(a, b, atol=1e-10, rtol=0)

    def test_context_dim_mismatch_rejected(self):
        cross = SpatialCrossAttention(8, 16, 2).double()
        with pytest.raises(ValueError):
            cross(torch.randn(1, 8, 4, 4, dtype=torch.float64),
                  torch.randn(1, 6, 12, dtype=torch.float64))

    def test_context_changes_output(self):
        cross = SpatialCrossAttention(8, 16, 2).double()
        _perturb(cross, seed=12)
        g = torch.Generator().manual_seed(21)
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        a = cross(x, torch.randn(1, 6, 16, generator=g, dtype=torch.float64))
        b = cross(x, torch.randn(1, 6, 16, generator=g, dtype=torch.float64))
        assert not torch.equal(a, b)


class TestConcatFusionOracle:
    def test_matches_scalar_reference_on_20_instances(self):
        for i in range(20):
            torch.manual_seed(300 + i)
            fuse = ConcatFusion(3).double()
            _perturb(fuse, seed=400 + i)
            x = torch.randn(1, 3, 2, 2, dtype=torch.float64)
            y = torch.randn(1, 3, 2, 2, dtype=torch.float64)
            got = fuse(x, y)[0].detach().numpy()
            want = caff_reference(fuse, x[0].numpy(), y[0].numpy())
            assert np.abs(got - want).max() < 1e-6

    def test_zero_init_blends_at_midpoint(self):
        fuse = ConcatFusion(4).double()
        _zero(fuse)
        x = torch.randn(2, 4, 3, 3, dtype=torch.float64)
        y = torch.randn(2, 4, 3, 3, dtype=torch.float64)
        assert torch.equal(fuse(x, y), 0.5 * x + 0.5 * y)

    def test_equal_inputs_are_a_fixed_point(self):
        fuse = ConcatFusion(4).double()
        _perturb(fuse, seed=13)
        x = torch.randn(2, 4, 3, 3, dtype=torch.float64)
        assert torch.allclose(fuse(x, x.clone()), x, atol=1e-12, rtol=0)

    def test_output_stays_between_inputs(self):
        # the gate is strictly inside (0, 1), so the blend is convex
        fuse = ConcatFusion(4).double()
        _perturb(fuse, seed=14)
        x = torch.randn(2, 4, 5, 5, dtype=torch.float64)
        y = torch.randn(2, 4, 5, 5, dtype=torch.float64)
        out = fuse(x, y)
        lo = torch.minimum(x, y) - 1e-12
        hi = torch.maximum(x, y) + 1e-12
        assert (out >= lo).all() and (out <= hi).all()

    def test_shape_mismatch_rejected(self):
        fuse = ConcatFusion(4).double()
        with pytest.raises(ValueError):
            fuse(torch.randn(1, 4, 3, 3, dtype=torch.float64),
                 torch.randn(1, 4, 3, 4, dtype=torch.float64))


class TestModulationBlock:
    def test_fully_zeroed_module_is_identity(self):
        mod = ModulationBlock(8, 16, 2).double()
        _zero(mod)
        x = torch.randn(2, 8, 4, 4, dtype=torch.float64)
        ctx = torch.randn(2, 5, 16, dtype=torch.float64)
        assert torch.equal(mod(x, ctx), x)

    def test_shape_preserved_both_variants(self):
        x = torch.randn(1, 8, 6, 6, dtype=torch.float64)
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        for fusion in (True, False):
            mod = ModulationBlock(8, 16, 2, fusion=fusion).double()
            assert mod(x, ctx).shape == x.shape

    def test_stacked_variant_has_no_fusion_params(self):
        assert ModulationBlock(8, 16, 2, fusion=False).fuse is None
        assert ModulationBlock(8, 16, 2, fusion=True).fuse is not None

    def test_variants_differ_once_trained(self):
        torch.manual_seed(4)
        fused = ModulationBlock(8, 16, 2, fusion=True).double()
        torch.manual_seed(4)
        stacked = ModulationBlock(8, 16, 2, fusion=False).double()
        _perturb(fused, seed=15)
        _perturb(stacked, seed=15)
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        assert not torch.equal(fused(x, ctx), stacked(x, ctx))


class TestResizing:
    def test_down_halves_space_doubles_channels(self):
        down = Downsample(16).double()
        out = down(torch.randn(1, 16, 8, 8, dtype=torch.float64))
        assert out.shape == (1, 32, 4, 4)

    def test_up_doubles_space_halves_channels(self):
        up = Upsample(16).double()
        out = up(torch.randn(1, 16, 4, 4, dtype=torch.float64))
        assert out.shape == (1, 8, 8, 8)


class TestRestorerConfig:
    def test_level_dims_double(self):
        cfg = RestorerConfig(base_channels=48)
        assert [cfg.level_dim(i) for i in range(4)] == [48, 96, 192, 384]

    def test_requires_four_levels(self):
        with pytest.raises(ValueError):
            RestorerConfig(blocks=(1, 1, 1))
        with pytest.raises(ValueError):
            RestorerConfig(heads=(1, 2))

    def test_round_trips_through_dict(self):
        cfg = toy_restorer_config(fusion=False)
        assert RestorerConfig.from_dict(cfg.to_dict()) == cfg


class TestContextRestorer:
    def test_fully_zeroed_network_is_exact_identity(self):
        net = ContextRestorer(toy_restorer_config()).double()
        _zero(net)
        img = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        assert torch.equal(net(img, ctx), img)

    def test_fresh_network_conditioning_starts_inert(self):
        # cross-attention output projections are born zero
        net = ContextRestorer(toy_restorer_config())
        for mod in (net.modulate1, net.modulate2, net.modulate3, net.modulate4):
            assert torch.equal(mod.cross.to_out.weight,
                               torch.zeros_like(mod.cross.to_out.weight))

    @pytest.mark.parametrize("size", [(64, 64), (71, 53)])
    def test_shape_round_trip_with_padding(self, size):
        net = ContextRestorer(toy_restorer_config()).double()
        h, w = size
        img = torch.rand(1, 3, h, w, dtype=torch.float64)
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        out = net(img, ctx)
        assert out.shape == (1, 3, h, w)

    def test_too_small_image_rejected(self):
        net = ContextRestorer(toy_restorer_config()).double()
        with pytest.raises(ValueError):
            net(torch.rand(1, 3, 7, 16, dtype=torch.float64),
                torch.randn(1, 5, 16, dtype=torch.float64))

    def test_non_finite_image_rejected(self):
        net = ContextRestorer(toy_restorer_config()).double()
        img = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        img[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            net(img, torch.randn(1, 5, 16, dtype=torch.float64))

    def test_non_finite_context_rejected(self):
        net = ContextRestorer(toy_restorer_config()).double()
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        ctx[0, 0, 0] = float("inf")
        with pytest.raises(ValueError):
            net(torch.rand(1, 3, 16, 16, dtype=torch.float64), ctx)

    def test_clamp_flag_bounds_output(self):
        net = ContextRestorer(toy_restorer_config()).double()
        _perturb(net, seed=16)
        img = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        ctx = torch.randn(1, 5, 16, dtype=torch.float64)
        out = net(img, ctx, clamp=True)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestRestorationModel:
    def test_restore_array_contract(self):
        model = build_model(toy_config(), seed=0)
        img = np.random.default_rng(0).random((3, 24, 24))
        out = model.restore_array(img, "the image is dark")
        assert out.shape == (3, 24, 24)
        assert out.dtype == np.float64
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_cem_route_requires_image(self):
        model = build_model(toy_config(), seed=0)
        rows, mask = model.encode_texts("some text")
        with pytest.raises(ValueError):
            model.compute_context(rows, mask, image=None, use_cem=True)

    def test_seeded_build_is_reproducible(self):
        a = build_model(toy_config(), seed=5)
        b = build_model(toy_config(), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_context_shape(self):
        model = build_model(toy_config(), seed=1)
        rows, mask = model.encode_texts(["a dark image", "rain streaks"])
        img = torch.rand(2, 3, 16, 16, dtype=model.dtype)
        z = model.compute_context(rows, mask, image=img, use_cem=True)
        assert z.shape == (2, model.config.text_len, model.config.ctx_dim)
