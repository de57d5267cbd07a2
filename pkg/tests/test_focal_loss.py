"""Focal loss oracle tests: closed-form values, CE reduction, gradients."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from glandscreen.models import focal_loss


def test_scalar_case_half_probability_gamma_two():
    # Equal logits give p_t = 0.5; loss = (1-0.5)^2 * ln 2 = 0.25 ln 2.
    logits = torch.zeros(1, 2, dtype=torch.float64)
    loss = focal_loss(logits, torch.tensor([0]), gamma=2.0)
    assert abs(loss.item() - 0.25 * math.log(2)) < 1e-9


def test_certain_prediction_has_zero_loss():
    logits = torch.tensor([[40.0, -40.0]], dtype=torch.float64)
    loss = focal_loss(logits, torch.tensor([0]), gamma=2.0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_gamma_zero_equals_cross_entropy():
    rng = torch.Generator().manual_seed(0)
    for _ in range(200):
        logits = torch.randn(16, 2, generator=rng, dtype=torch.float64) * 3
        targets = torch.randint(0, 2, (16,), generator=rng)
        ours = focal_loss(logits, targets, gamma=0.0)
        ce = F.cross_entropy(logits, targets)
        assert abs(ours.item() - ce.item()) < 1e-9


def finite_difference_grad(logits: torch.Tensor, targets: torch.Tensor, gamma: float, h: float = 1e-5):
    numeric = torch.zeros_like(logits)
    for i in range(logits.shape[0]):
        for j in range(logits.shape[1]):
            plus = logits.clone()
            minus = logits.clone()
            plus[i, j] += h
            minus[i, j] -= h
            numeric[i, j] = (
                focal_loss(plus, targets, gamma=gamma) - focal_loss(minus, targets, gamma=gamma)
            ).item() / (2 * h)
    return numeric


def test_gradient_matches_finite_differences():
    rng = torch.Generator().manual_seed(1)
    for _ in range(5):
        logits = (torch.randn(6, 2, generator=rng, dtype=torch.float64) * 2).requires_grad_(True)
        targets = torch.randint(0, 2, (6,), generator=rng)
        loss = focal_loss(logits, targets, gamma=2.0)
        (grad,) = torch.autograd.grad(loss, logits)
        numeric = finite_difference_grad(logits.detach(), targets, gamma=2.0)
        rel = torch.linalg.norm(grad - numeric) / torch.linalg.norm(numeric)
        assert rel.item() < 1e-4


def test_monotone_decreasing_in_true_class_probability():
    # Larger p_t must strictly lower the per-sample loss for fixed gamma.
    p_grid = np.linspace(0.05, 0.95, 19)
    losses = []
    for p in p_grid:
        logit = math.log(p / (1 - p))
        logits = torch.tensor([[logit, 0.0]], dtype=torch.float64)
        losses.append(focal_loss(logits, torch.tensor([0]), gamma=2.0).item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_never_exceeds_cross_entropy():
    rng = torch.Generator().manual_seed(3)
    logits = torch.randn(64, 2, generator=rng, dtype=torch.float64) * 4
    targets = torch.randint(0, 2, (64,), generator=rng)
    for gamma in (0.5, 1.0, 2.0, 5.0):
        assert (
            focal_loss(logits, targets, gamma=gamma).item()
            <= F.cross_entropy(logits, targets).item() + 1e-12
        )


def test_alpha_weighting():
    logits = torch.zeros(2, 2, dtype=torch.float64)
    targets = torch.tensor([0, 1])
    base = 0.25 * math.log(2)
    loss = focal_loss(logits, targets, gamma=2.0, alpha=(2.0, 0.5))
    assert abs(loss.item() - (2.0 * base + 0.5 * base) / 2) < 1e-12


def test_negative_gamma_rejected():
    with pytest.raises(ValueError):
        focal_loss(torch.zeros(1, 2), torch.tensor([0]), gamma=-1.0)
