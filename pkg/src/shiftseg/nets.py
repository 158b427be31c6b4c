"""Desk-scale networks: layered generator pair, discriminator, encoder.

Architectures are deliberately small fixed-resolution convnets (resolutions
16 to 128). The generators use GroupNorm so their outputs are deterministic
functions of (parameters, z) in both train and eval mode, which matters for
GAN inversion.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .compose import LayeredScene
from .errors import ConfigError

__all__ = [
    "BackgroundGenerator",
    "ForegroundGenerator",
    "GeneratorPair",
    "SingleTrunkGenerator",
    "Discriminator",
    "Encoder",
    "sample_latent",
    "generate_layers",
    "generate_layers_from_codes",
]

SUPPORTED_RESOLUTIONS = (16, 32, 64, 128)
MAX_CHANNELS = 256


def _check_resolution(resolution: int) -> int:
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"resolution must be one of {SUPPORTED_RESOLUTIONS}, got {resolution}")
    return int(math.log2(resolution // 4))  # number of 2x up/down steps from 4x4


def _norm(ch: int) -> nn.Module:
    return nn.GroupNorm(min(8, ch), ch)


class _GeneratorTrunk(nn.Module):
    """Latent vector -> (base_channels, resolution, resolution) feature map."""

    def __init__(self, latent_dim: int, resolution: int, base: int):
        super().__init__()
        n_up = _check_resolution(resolution)
        ch0 = min(base * 2 ** (n_up - 1), MAX_CHANNELS)
        self.latent_dim = latent_dim
        self.ch0 = ch0
        self.fc = nn.Linear(latent_dim, ch0 * 4 * 4)
        blocks = []
        ch = ch0
        for i in range(n_up):
            ch_out = max(base, ch // 2) if i < n_up - 1 else base
            blocks += [
                nn.ConvTranspose2d(ch, ch_out, 4, stride=2, padding=1),
                _norm(ch_out),
                nn.LeakyReLU(0.2),
            ]
            ch = ch_out
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"expected latent batch of shape (B, {self.latent_dim}), got {tuple(z.shape)}")
        h = self.fc(z).reshape(z.shape[0], self.ch0, 4, 4)
        return self.blocks(h)


class BackgroundGenerator(nn.Module):
    """z -> 3-channel background image in (-1, 1)."""

    def __init__(self, latent_dim: int = 64, resolution: int = 32, base: int = 32):
        super().__init__()
        self.trunk = _GeneratorTrunk(latent_dim, resolution, base)
        self.head = nn.Conv2d(base, 3, 3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.head(self.trunk(z)))


class ForegroundGenerator(nn.Module):
    """z -> (3-channel foreground image, 1-channel sigmoid mask)."""

    def __init__(self, latent_dim: int = 64, resolution: int = 32, base: int = 32):
        super().__init__()
        self.trunk = _GeneratorTrunk(latent_dim, resolution, base)
        self.head = nn.Conv2d(base, 4, 3, padding=1)

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.head(self.trunk(z))
        return torch.tanh(out[:, :3]), torch.sigmoid(out[:, 3:4])


class GeneratorPair(nn.Module):
    """Two separate generators sharing the latent space: background and foreground+mask."""

    def __init__(self, latent_dim: int = 64, resolution: int = 32, base: int = 32):
        super().__init__()
        self.latent_dim = latent_dim
        self.resolution = resolution
        self.background_net = BackgroundGenerator(latent_dim, resolution, base)
        self.foreground_net = ForegroundGenerator(latent_dim, resolution, base)

    def forward(self, z_background: torch.Tensor, z_foreground: torch.Tensor | None = None) -> LayeredScene:
        if z_foreground is None:
            z_foreground = z_background
        bg = self.background_net(z_background)
        fg, mask = self.foreground_net(z_foreground)
        return LayeredScene(background=bg, foreground=fg, mask=mask)


class SingleTrunkGenerator(nn.Module):
    """Ablation variant: one trunk with a 7-channel head (3 + 3 + 1)."""

    def __init__(self, latent_dim: int = 64, resolution: int = 32, base: int = 32):
        super().__init__()
        self.latent_dim = latent_dim
        self.resolution = resolution
        self.trunk = _GeneratorTrunk(latent_dim, resolution, base)
        self.head = nn.Conv2d(base, 7, 3, padding=1)

    def forward(self, z_background: torch.Tensor, z_foreground: torch.Tensor | None = None) -> LayeredScene:
        # a single generator consumes a single code; the second is ignored
        out = self.head(self.trunk(z_background))
        return LayeredScene(
            background=torch.tanh(out[:, :3]),
            foreground=torch.tanh(out[:, 3:6]),
            mask=torch.sigmoid(out[:, 6:7]),
        )


class Discriminator(nn.Module):
    """Image -> scalar score, with a feature tap at a fixed spatial size.

    No normalization layers (gradient penalty training). The tap exposes the
    activation map whose spatial size equals `feature_resolution`, used as
    the perceptual feature for the autoencoder loss.
    """

    def __init__(self, resolution: int = 32, base: int = 32, feature_resolution: int = 8):
        super().__init__()
        n_down = _check_resolution(resolution)
        self.resolution = resolution
        layers = []
        tap_index = None
        ch = 3
        size = resolution
        for i in range(n_down):
            ch_out = min(base * 2**i, MAX_CHANNELS)
            layers += [nn.Conv2d(ch, ch_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            ch = ch_out
            size //= 2
            if size == feature_resolution:
                tap_index = len(layers) - 1
        if tap_index is None:
            raise ConfigError(
                f"feature tap at {feature_resolution}x{feature_resolution} unreachable "
                f"from resolution {resolution}"
            )
        self.layers = nn.ModuleList(layers)
        self.tap_index = tap_index
        self.final = nn.Conv2d(ch, ch, 3, padding=1)
        self.fc = nn.Linear(ch * 4 * 4, 1)

    def _run(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = x
        tap = None
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i == self.tap_index:
                tap = h
        h = nn.functional.leaky_relu(self.final(h), 0.2)
        score = self.fc(h.reshape(h.shape[0], -1)).squeeze(1)
        return score, tap

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x)[0]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Spatial feature grid at the tap layer (perceptual-loss features)."""
        return self._run(x)[1]


class _ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm1 = _norm(ch)
        self.norm2 = _norm(ch)

    def forward(self, x):
        h = nn.functional.leaky_relu(self.norm1(self.conv1(x)), 0.2)
        h = self.norm2(self.conv2(h))
        return nn.functional.leaky_relu(x + h, 0.2)


class Encoder(nn.Module):
    """Image -> `code_count` latent codes of dimension `latent_dim`."""

    def __init__(self, resolution: int = 32, latent_dim: int = 64, code_count: int = 2, base: int = 32):
        super().__init__()
        if code_count < 1:
            raise ConfigError(f"code_count must be >= 1, got {code_count}")
        n_down = _check_resolution(resolution)
        self.resolution = resolution
        self.latent_dim = latent_dim
        self.code_count = code_count
        layers = [nn.Conv2d(3, base, 3, padding=1), nn.LeakyReLU(0.2)]
        ch = base
        for i in range(n_down):
            ch_out = min(base * 2**i, MAX_CHANNELS)
            layers += [nn.Conv2d(ch, ch_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2), _ResBlock(ch_out)]
            ch = ch_out
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(ch * 4 * 4, code_count * latent_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(
                f"expected (B, 3, {self.resolution}, {self.resolution}) input, got {tuple(x.shape)}"
            )
        h = self.body(x)
        codes = self.fc(h.reshape(h.shape[0], -1))
        return codes.reshape(x.shape[0], self.code_count, self.latent_dim)


def sample_latent(batch: int, latent_dim: int, rng: torch.Generator) -> torch.Tensor:
    """Batch of i.i.d. standard-normal latent vectors."""
    if batch < 1 or latent_dim < 1:
        raise ValueError("batch and latent_dim must be >= 1")
    return torch.randn(batch, latent_dim, generator=rng)


def generate_layers(gen: nn.Module, z: torch.Tensor) -> LayeredScene:
    """Run a generator (pair or single-trunk) with one shared code per sample."""
    return gen(z)


def generate_layers_from_codes(gen: nn.Module, codes: torch.Tensor) -> LayeredScene:
    """Route encoder codes to the generator: code 0 -> background, code 1 -> foreground.

    codes: (B, c, k). With c == 1 the same code feeds both nets.
    """
    if codes.ndim != 3:
        raise ValueError(f"expected (B, c, k) codes, got {tuple(codes.shape)}")
    z_b = codes[:, 0]
    z_f = codes[:, 1] if codes.shape[1] > 1 else codes[:, 0]
    return gen(z_b, z_f)
