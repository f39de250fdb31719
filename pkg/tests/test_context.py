"""Context enhancement, context transform, and the triplet objective."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from restora.context import (
    ContextEnhancer,
    ContextTransformer,
    context_distance,
    triplet_loss,
)

torch.manual_seed(0)


def rows_with_mask(batch=2, length=6, dim=16, real=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    rows = torch.zeros(batch, length, dim, dtype=torch.float64)
    rows[:, :real] = torch.randn(batch, real, dim, generator=g, dtype=torch.float64)
    mask = torch.zeros(batch, length, dtype=torch.bool)
    mask[:, :real] = True
    return rows, mask


def double(module):
    return module.double()


class TestContextEnhancer:
    def test_fresh_module_is_exact_pass_through(self):
        # residual output layers start at zero, so enhancement starts inert
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        rows, mask = rows_with_mask()
        img = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        out = enhancer(img, rows, mask)
        assert torch.equal(out, rows)

    def test_shape_contract(self):
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        rows, mask = rows_with_mask(batch=3, length=10, dim=16)
        out = enhancer(torch.rand(3, 3, 24, 24, dtype=torch.float64), rows, mask)
        assert out.shape == (3, 10, 16)

    def test_image_sides_below_grid_rejected(self):
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        with pytest.raises(ValueError):
            enhancer.image_tokens(torch.rand(1, 3, 7, 16, dtype=torch.float64))

    def test_image_token_grid_is_fixed(self):
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        for side in (8, 16, 33):
            tokens = enhancer.image_tokens(torch.rand(1, 3, side, side, dtype=torch.float64))
            assert tokens.shape == (1, 64, 16)

    def test_padding_rows_zeroed_even_when_input_junk(self):
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        _randomize(enhancer, seed=1)
        rows, mask = rows_with_mask()
        junk = rows.clone()
        junk[:, 4:] = 99.0
        out = enhancer(torch.rand(2, 3, 16, 16, dtype=torch.float64), junk, mask)
        assert torch.equal(out[:, 4:], torch.zeros_like(out[:, 4:]))

    def test_padding_content_never_reaches_real_rows(self):
        # queries don't attend to each other, so junk rows only corrupt themselves
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        _randomize(enhancer, seed=2)
        rows, mask = rows_with_mask()
        img = torch.rand(2, 3, 16, 16, dtype=torch.float64)
        out_clean = enhancer(img, rows, mask)
        junk = rows.clone()
        junk[:, 4:] = torch.randn(2, 2, 16, dtype=torch.float64) * 50
        out_junk = enhancer(img, junk, mask)
        assert torch.allclose(out_clean, out_junk, atol=0, rtol=0)

    def test_image_changes_output_once_trained_weights_exist(self):
        enhancer = double(ContextEnhancer(channels=8, dim=16, heads=4))
        _randomize(enhancer, seed=3)
        rows, mask = rows_with_mask()
        a = enhancer(torch.full((2, 3, 16, 16), 0.25, dtype=torch.float64), rows, mask)
        b = enhancer(torch.full((2, 3, 16, 16), 0.75, dtype=torch.float64), rows, mask)
        assert not torch.equal(a[:, :4], b[:, :4])


class TestContextTransformer:
    def test_shape_contract(self):
        ct = double(ContextTransformer(dim=16, out_dim=12, heads=4))
        rows, mask = rows_with_mask()
        z = ct(rows, mask)
        assert z.shape == (2, 6, 12)
        assert torch.equal(z[:, 4:], torch.zeros_like(z[:, 4:]))

    def test_identity_configuration(self):
        # zero the residual branches and make the head the identity: Z == rows
        ct = double(ContextTransformer(dim=16, out_dim=16, heads=4))
        with torch.no_grad():
            torch.nn.init.zeros_(ct.attn.to_out.weight)
            torch.nn.init.zeros_(ct.attn.to_out.bias)
            torch.nn.init.zeros_(ct.mlp.fc2.weight)
            torch.nn.init.zeros_(ct.mlp.fc2.bias)
            ct.out_proj.weight.copy_(torch.eye(16, dtype=torch.float64))
            torch.nn.init.zeros_(ct.out_proj.bias)
        rows, mask = rows_with_mask()
        assert torch.equal(ct(rows, mask), rows)

    def test_padding_content_never_reaches_real_rows(self):
        ct = double(ContextTransformer(dim=16, out_dim=12, heads=4))
        _randomize(ct, seed=4)
        rows, mask = rows_with_mask()
        junk = rows.clone()
        junk[:, 4:] = torch.randn(2, 2, 16, dtype=torch.float64) * 50
        assert torch.allclose(ct(rows, mask), ct(junk, mask), atol=0, rtol=0)

    def test_real_rows_interact(self):
        # unlike the enhancer, rows self-attend: perturbing one real row moves others
        ct = double(ContextTransformer(dim=16, out_dim=16, heads=4))
        _randomize(ct, seed=5)
        rows, mask = rows_with_mask()
        bumped = rows.clone()
        bumped[:, 0] += 1.0
        a = ct(rows, mask)
        b = ct(bumped, mask)
        assert not torch.equal(a[:, 1:4], b[:, 1:4])


class TestContextDistance:
    def test_exact_small_case(self):
        a = torch.zeros(1, 4, 5, dtype=torch.float64)
        b = torch.zeros(1, 4, 5, dtype=torch.float64)
        b.view(-1)[:4] = 1.0
        assert float(context_distance(a, b)) == 4.0 / 20.0

    def test_zero_for_equal_inputs(self):
        a = torch.randn(3, 4, 5, dtype=torch.float64)
        assert torch.equal(context_distance(a, a.clone()), torch.zeros(3, dtype=torch.float64))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            context_distance(torch.zeros(1, 4, 5), torch.zeros(1, 4, 6))

    def test_symmetry(self):
        a = torch.randn(2, 4, 5, dtype=torch.float64)
        b = torch.randn(2, 4, 5, dtype=torch.float64)
        assert torch.equal(context_distance(a, b), context_distance(b, a))


class TestTripletLoss:
    def test_inactive_hinge_is_zero(self):
        # z == z_pos, d(z, z_neg) = 2.0, margin 0.5 -> max(0, 0 - 2 + 0.5) = 0
        z = torch.zeros(1, 2, 2, dtype=torch.float64)
        z_neg = torch.tensor([[[2.0, 0.0], [0.0, 2.0]]], dtype=torch.float64)
        assert float(context_distance(z, z_neg)) == 2.0
        assert float(triplet_loss(z, z.clone(), z_neg, alpha=0.5)) == 0.0

    def test_degenerate_triplet_returns_margin(self):
        z = torch.randn(2, 4, 5, dtype=torch.float64)
        assert float(triplet_loss(z, z.clone(), z.clone(), alpha=0.5)) == 0.5

    def test_hand_arithmetic_case(self):
        # d+ = 1.0, d- = 0.2, margin 0.3 -> 1.1 (exact in float64)
        z = torch.zeros(1, 4, 5, dtype=torch.float64)
        z_pos = torch.ones(1, 4, 5, dtype=torch.float64)
        z_neg = torch.zeros(1, 4, 5, dtype=torch.float64)
        z_neg.view(-1)[:4] = 1.0
        loss = float(triplet_loss(z, z_pos, z_neg, alpha=0.3))
        assert loss == 1.0 - 0.2 + 0.3
        assert abs(loss - 1.1) < 1e-15

    def test_batch_averaging(self):
        # one active sample (margin 0.5), one inactive -> mean 0.25
        z = torch.zeros(2, 2, 2, dtype=torch.float64)
        z_pos = torch.zeros(2, 2, 2, dtype=torch.float64)
        z_neg = torch.zeros(2, 2, 2, dtype=torch.float64)
        z_neg[1] = torch.tensor([[2.0, 0.0], [0.0, 2.0]], dtype=torch.float64)
        assert float(triplet_loss(z, z_pos, z_neg, alpha=0.5)) == 0.25

    def test_negative_margin_rejected(self):
        z = torch.zeros(1, 2, 2, dtype=torch.float64)
        with pytest.raises(ValueError):
            triplet_loss(z, z, z, alpha=-0.1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            triplet_loss(torch.zeros(1, 2, 2), torch.zeros(1, 2, 3), torch.zeros(1, 2, 2))

    def test_two_dim_inputs_treated_as_single_sample(self):
        z = torch.zeros(2, 2, dtype=torch.float64)
        assert float(triplet_loss(z, z.clone(), z.clone(), alpha=0.4)) == 0.4

    @given(
        d_pos=st.floats(min_value=0.0, max_value=4.0),
        bump=st.floats(min_value=0.0, max_value=2.0),
        d_neg=st.floats(min_value=0.0, max_value=4.0),
        alpha=st.floats(min_value=0.0, max_value=1.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_positive_distance(self, d_pos, bump, d_neg, alpha):
        def loss(dp, dn):
            z = torch.zeros(1, 1, 1, dtype=torch.float64)
            zp = torch.full((1, 1, 1), dp ** 0.5, dtype=torch.float64)
            zn = torch.full((1, 1, 1), dn ** 0.5, dtype=torch.float64)
            return float(triplet_loss(z, zp, zn, alpha=alpha))

        base = loss(d_pos, d_neg)
        assert base >= 0.0
        assert loss(d_pos + bump, d_neg) >= base  # grows with d+
        assert loss(d_pos, d_neg + bump) <= base  # shrinks with d-


def _randomize(module, seed: int):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(0.2 * torch.randn(p.shape, generator=g, dtype=p.dtype))
