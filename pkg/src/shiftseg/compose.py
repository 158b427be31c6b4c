"""Layered-scene compositing: alpha blending, shifted blending, grid translation.

All operations are pure functions on torch tensors and stay differentiable
with respect to every layer. Images are channel-first, either (C, H, W) or
batched (B, C, H, W); masks use a single channel. Images live in [-1, 1],
masks in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import torch

__all__ = [
    "ShapeMismatchError",
    "DomainError",
    "Shift",
    "LayeredScene",
    "compose",
    "compose_shifted",
    "translate",
    "sample_shift",
]


class ShapeMismatchError(ValueError):
    """Layer or batch dimensions disagree."""


class DomainError(ValueError):
    """A value lies outside its admissible domain (mask range, shift range)."""


class Shift(NamedTuple):
    """Integer pixel displacement of the foreground relative to the background.

    dx moves content right (along width), dy moves content down (along height).
    """

    dx: int
    dy: int


@dataclass(frozen=True)
class LayeredScene:
    """A scene as (background, foreground, mask).

    background, foreground: (..., 3, H, W) or (..., C, H, W) image tensors.
    mask: (..., 1, H, W) alpha matte in [0, 1].
    """

    background: torch.Tensor
    foreground: torch.Tensor
    mask: torch.Tensor

    def __post_init__(self):
        b, f, m = self.background, self.foreground, self.mask
        if b.shape[-2:] != f.shape[-2:] or b.shape[-2:] != m.shape[-2:]:
            raise ShapeMismatchError(
                f"layer spatial sizes differ: B {tuple(b.shape)}, "
                f"F {tuple(f.shape)}, m {tuple(m.shape)}"
            )
        if b.shape[:-3] != f.shape[:-3] or b.shape[:-3] != m.shape[:-3]:
            raise ShapeMismatchError("layer batch dimensions differ")

    @property
    def height(self) -> int:
        return self.background.shape[-2]

    @property
    def width(self) -> int:
        return self.background.shape[-1]


def _check_mask(mask: torch.Tensor) -> None:
    if not torch.isfinite(mask).all():
        raise DomainError("mask contains non-finite entries")
    if mask.numel() and (mask.min() < 0 or mask.max() > 1):
        raise DomainError(
            f"mask entries outside [0, 1]: min {float(mask.min()):g}, "
            f"max {float(mask.max()):g}"
        )


def compose(scene: LayeredScene) -> torch.Tensor:
    """Blend the layers: out[p] = (1 - m[p]) * B[p] + m[p] * F[p]."""
    _check_mask(scene.mask)
    if scene.foreground.shape != scene.background.shape:
        raise ShapeMismatchError("background and foreground shapes differ")
    return (1 - scene.mask) * scene.background + scene.mask * scene.foreground


def translate(grid: torch.Tensor, shift: Shift, fill: float = 0.0) -> torch.Tensor:
    """Index translation: out[p] = grid[p + shift] where defined, else fill.

    Content visually moves by -shift. Differentiable (pad + slice).
    """
    dx, dy = int(shift.dx), int(shift.dy)
    h, w = grid.shape[-2], grid.shape[-1]
    if abs(dy) >= h or abs(dx) >= w:
        return torch.full_like(grid, fill)
    # pad (left, right, top, bottom) so the shifted window stays in bounds
    padded = torch.nn.functional.pad(
        grid, (max(-dx, 0), max(dx, 0), max(-dy, 0), max(dy, 0)), value=fill
    )
    return padded[..., max(dy, 0) : max(dy, 0) + h, max(dx, 0) : max(dx, 0) + w]


def compose_shifted(scene: LayeredScene, shift: Shift, max_shift: int | None = None) -> torch.Tensor:
    """Blend with the foreground layer and its mask displaced by `shift`.

    Pixels the mask vacates fall back to the background; mask and foreground
    are zero-filled outside the domain, so objects may partially exit the
    frame. With shift (0, 0) this equals compose(scene) exactly.
    """
    if max_shift is not None and (abs(shift.dx) > max_shift or abs(shift.dy) > max_shift):
        raise DomainError(f"shift {tuple(shift)} exceeds allowed range ±{max_shift}")
    _check_mask(scene.mask)
    moved = LayeredScene(
        background=scene.background,
        foreground=translate(scene.foreground, Shift(-shift.dx, -shift.dy), 0.0),
        mask=translate(scene.mask, Shift(-shift.dx, -shift.dy), 0.0),
    )
    return compose(moved)


def sample_shift(delta: int, rng: torch.Generator) -> Shift:
    """Draw dx, dy independently and uniformly from the integers {-delta..delta}."""
    if delta < 0:
        raise DomainError("shift range delta must be >= 0")
    if delta == 0:
        return Shift(0, 0)
    draw = torch.randint(-delta, delta + 1, (2,), generator=rng)
    return Shift(int(draw[0]), int(draw[1]))
