"""Finite-difference machinery sanity checks (the full suite runs in acceptance)."""

import torch

from restora.gradcheck import DEFAULT_TOL, _check_basic_block, _check_fusion, max_rel_error


def test_known_quadratic_gradient_is_exact():
    # loss = sum(p^2) has gradient 2p, so central differences agree to ~eps^2
    p = torch.tensor([0.3, -1.2, 0.7], dtype=torch.float64, requires_grad=True)
    err = max_rel_error(lambda: (p * p).sum(), [p])
    assert err < 1e-8


def test_wrong_gradient_is_caught():
    # a detached term contributes to the value but not to autograd, so the
    # numeric and analytic gradients disagree and the error is order one
    p = torch.tensor([0.5, 1.5], dtype=torch.float64, requires_grad=True)
    err = max_rel_error(lambda: (p * p).sum() + 3.0 * p.detach().sum(), [p])
    assert err > 0.1


def test_fusion_gradients():
    assert _check_fusion() < DEFAULT_TOL


def test_basic_block_gradients():
    assert _check_basic_block() < DEFAULT_TOL
