"""Training objectives for the layered-scene GAN and the encoder.

All functions take batched tensors (B, C, H, W) and return scalar tensors
that stay attached to the autograd graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .compose import ShapeMismatchError

__all__ = [
    "LossWeights",
    "mask_size_loss",
    "mask_binary_loss",
    "generator_loss",
    "gradient_penalty",
    "discriminator_loss",
    "autoencoder_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the generator and discriminator objectives."""

    gamma1: float = 2.0  # mask-size hinge weight
    gamma2: float = 2.0  # binarization weight
    lambda_gp: float = 10.0  # gradient penalty strength
    epsilon_drift: float = 0.001  # drift regularizer on real scores
    eta: float = 0.25  # minimum mean mask fraction

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "lambda_gp", "epsilon_drift", "eta"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if not self.eta < 1:
            raise ValueError(f"eta must be < 1, got {self.eta}")


def _require_nonempty(masks: torch.Tensor) -> None:
    if masks.ndim < 3 or masks.shape[0] == 0:
        raise ValueError("expected a non-empty batch of masks")


def mask_size_loss(masks: torch.Tensor, eta: float) -> torch.Tensor:
    """Hinge on the per-sample mean mask value: mean_i max(0, eta - mean(m_i))."""
    _require_nonempty(masks)
    per_sample_mean = masks.reshape(masks.shape[0], -1).mean(dim=1)
    return torch.clamp(eta - per_sample_mean, min=0).mean()


def mask_binary_loss(masks: torch.Tensor) -> torch.Tensor:
    """Mean of min(m, 1 - m): zero exactly on binary masks, 0.5 at m = 0.5."""
    _require_nonempty(masks)
    return torch.minimum(masks, 1 - masks).mean()


def generator_loss(
    d_scores: torch.Tensor, masks: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """-E[D(x_hat)] + gamma1 * size hinge + gamma2 * binarization."""
    if d_scores.shape[0] != masks.shape[0]:
        raise ShapeMismatchError(
            f"batch mismatch: {d_scores.shape[0]} scores vs {masks.shape[0]} masks"
        )
    return (
        -d_scores.mean()
        + weights.gamma1 * mask_size_loss(masks, weights.eta)
        + weights.gamma2 * mask_binary_loss(masks)
    )


def gradient_penalty(
    disc: Callable[[torch.Tensor], torch.Tensor],
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: torch.Generator,
) -> torch.Tensor:
    """E[(||grad D(x_tilde)||_2 - 1)^2] on per-sample random interpolates.

    One interpolation coefficient per sample; the gradient norm is taken
    jointly over all pixels and channels of each sample.
    """
    if real.shape != fake.shape:
        raise ShapeMismatchError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    zeta = torch.rand((real.shape[0],) + (1,) * (real.ndim - 1), generator=rng, dtype=real.dtype)
    x_tilde = (zeta * real + (1 - zeta) * fake).detach().requires_grad_(True)
    scores = disc(x_tilde)
    grads = torch.autograd.grad(
        scores.sum(), x_tilde, create_graph=True, retain_graph=True
    )[0]
    norms = grads.reshape(grads.shape[0], -1).norm(dim=1)
    return ((norms - 1) ** 2).mean()


def discriminator_loss(
    disc: Callable[[torch.Tensor], torch.Tensor],
    real: torch.Tensor,
    fake: torch.Tensor,
    weights: LossWeights,
    rng: torch.Generator,
) -> torch.Tensor:
    """E[D(x_hat)] - E[D(x)] + lambda * gradient penalty + epsilon * E[D(x)^2]."""
    if real.shape != fake.shape:
        raise ShapeMismatchError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    real_scores = disc(real)
    fake_scores = disc(fake)
    return (
        fake_scores.mean()
        - real_scores.mean()
        + weights.lambda_gp * gradient_penalty(disc, real, fake, rng)
        + weights.epsilon_drift * (real_scores**2).mean()
    )


def autoencoder_loss(
    x: torch.Tensor,
    x_rec: torch.Tensor,
    feature_fn: Callable[[torch.Tensor], torch.Tensor],
) -> torch.Tensor:
    """Mean L1 pixel distance plus mean squared feature distance."""
    if x.shape != x_rec.shape:
        raise ShapeMismatchError(f"x {tuple(x.shape)} vs reconstruction {tuple(x_rec.shape)}")
    pixel = (x_rec - x).abs().mean()
    perceptual = ((feature_fn(x_rec) - feature_fn(x)) ** 2).mean()
    return pixel + perceptual
