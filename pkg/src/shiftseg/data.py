"""Datasets: synthetic scenes with exact ground-truth masks, image-folder
ingestion, and the training-time augmentations (resize 1.125x + random crop,
background contrast jitter).

Synthetic scenes draw foreground and background colors from disjoint palettes
(warm vs. cool) so figure and ground are statistically separable by
construction, making the shift-realism assumption hold on this data.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import ConfigError

__all__ = [
    "SynthParams",
    "DatasetRecord",
    "synth_scene",
    "build_synth_dataset",
    "load_manifest_dataset",
    "augment_real",
    "jitter_contrast",
    "load_image_folder",
    "image_to_tensor",
    "tensor_to_image",
]

log = logging.getLogger(__name__)

OBJECT_KINDS = ("ellipse", "rectangle", "polygon")
TEXTURE_FAMILIES = ("flat", "gradient", "noise")


@dataclass(frozen=True)
class SynthParams:
    resolution: int = 32
    object_kinds: Sequence[str] = OBJECT_KINDS
    object_scale_range: tuple[float, float] = (0.2, 0.3)
    fg_textures: Sequence[str] = TEXTURE_FAMILIES
    bg_textures: Sequence[str] = TEXTURE_FAMILIES
    position_jitter: int = 4
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.object_scale_range
        if not (0 < lo <= hi < 1):
            raise ConfigError(f"object scale range must lie in (0, 1), got {self.object_scale_range}")
        if self.resolution < 16:
            raise ConfigError(f"resolution must be >= 16, got {self.resolution}")
        for kind in self.object_kinds:
            if kind not in OBJECT_KINDS:
                raise ConfigError(f"unknown object kind {kind!r}")
        for fam in tuple(self.fg_textures) + tuple(self.bg_textures):
            if fam not in TEXTURE_FAMILIES:
                raise ConfigError(f"unknown texture family {fam!r}")
        # the largest admissible object must still fit with room to jitter
        max_extent = 2 * math.sqrt(hi * self.resolution**2 / math.pi)
        if max_extent + 2 * self.position_jitter + 2 > self.resolution:
            raise ConfigError(
                f"scale range {self.object_scale_range} with jitter {self.position_jitter} "
                f"does not fit in resolution {self.resolution}"
            )


@dataclass
class DatasetRecord:
    """One training/eval example: image in [-1, 1], optional binary gt mask."""

    image: torch.Tensor  # (3, H, W) float32 in [-1, 1]
    gt_mask: Optional[torch.Tensor] = None  # (1, H, W) float32 in {0, 1}
    source: str = ""


def image_to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


def tensor_to_image(t: torch.Tensor) -> Image.Image:
    arr = ((t.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return Image.fromarray(arr.permute(1, 2, 0).numpy())


def _cool_color(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(-1, -0.3), rng.uniform(-0.5, 0.5), rng.uniform(0.3, 1)])


def _warm_color(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(0.3, 1), rng.uniform(-0.5, 0.5), rng.uniform(-1, -0.3)])


def _texture(family: str, res: int, color_fn, rng: np.random.Generator) -> np.ndarray:
    """(3, res, res) texture in [-1, 1] from one palette."""
    if family == "flat":
        return np.tile(color_fn(rng)[:, None, None], (1, res, res))
    if family == "gradient":
        c0, c1 = color_fn(rng), color_fn(rng)
        theta = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:res, 0:res] / max(res - 1, 1)
        t = (np.cos(theta) * xx + np.sin(theta) * yy + 1) / 2  # in [0, 1]
        return c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    if family == "noise":
        base = color_fn(rng)[:, None, None]
        noise = rng.uniform(-0.15, 0.15, size=(3, res, res))
        return np.clip(base + noise, -1, 1)
    raise ConfigError(f"unknown texture family {family!r}")


def _object_mask(kind: str, res: int, target_frac: float, center: tuple[float, float], rng) -> np.ndarray:
    cy, cx = center
    yy, xx = np.mgrid[0:res, 0:res]
    if kind == "ellipse":
        aspect = rng.uniform(0.6, 1.6)
        a = math.sqrt(target_frac * res * res / math.pi * aspect)
        b = a / aspect
        return (((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1).astype(np.float32)
    if kind == "rectangle":
        aspect = rng.uniform(0.6, 1.6)
        w = math.sqrt(target_frac * res * res * aspect)
        h = w / aspect
        return ((np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)).astype(np.float32)
    if kind == "polygon":
        n_vert = int(rng.integers(5, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_vert))
        radii = rng.uniform(0.7, 1.0, size=n_vert)
        # scale so the polygon area matches the target fraction
        area_unit = 0.5 * np.abs(
            np.sum(
                radii * np.roll(radii, -1) * np.sin(np.roll(angles, -1) - angles)
            )
        )
        scale = math.sqrt(target_frac * res * res / area_unit)
        pts = [(cx + scale * r * math.cos(a), cy + scale * r * math.sin(a)) for r, a in zip(radii, angles)]
        img = Image.new("L", (res, res), 0)
        ImageDraw.Draw(img).polygon(pts, fill=255)
        return (np.asarray(img) > 0).astype(np.float32)
    raise ConfigError(f"unknown object kind {kind!r}")


def synth_scene(params: SynthParams, rng: np.random.Generator) -> DatasetRecord:
    """One textured object on a textured background with its exact support mask."""
    res = params.resolution
    lo, hi = params.object_scale_range
    bg = _texture(str(rng.choice(list(params.bg_textures))), res, _cool_color, rng)
    fg = _texture(str(rng.choice(list(params.fg_textures))), res, _warm_color, rng)
    jitter = params.position_jitter
    mask = None
    for _ in range(100):
        kind = str(rng.choice(list(params.object_kinds)))
        target = rng.uniform(lo, hi)
        cy = res / 2 + rng.uniform(-jitter, jitter)
        cx = res / 2 + rng.uniform(-jitter, jitter)
        candidate = _object_mask(kind, res, target, (cy, cx), rng)
        if lo <= candidate.mean() <= hi:
            mask = candidate
            break
    if mask is None:
        raise ConfigError(
            f"could not rasterize an object with area fraction in {params.object_scale_range} "
            f"at resolution {res}"
        )
    image = bg * (1 - mask) + fg * mask
    return DatasetRecord(
        image=torch.from_numpy(image.astype(np.float32)),
        gt_mask=torch.from_numpy(mask[None].astype(np.float32)),
    )


def build_synth_dataset(n: int, params: SynthParams, path: str | Path) -> Path:
    """Persist n synthetic records plus a JSONL manifest; returns the manifest path.

    Every record gets its own seed derived from params.seed, so rebuilding
    from the same manifest reproduces byte-identical files.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 records, got {n}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with manifest.open("w") as fh:
        for i in range(n):
            record_seed = params.seed * 1_000_003 + i
            record = synth_scene(params, np.random.default_rng(record_seed))
            img_name, mask_name = f"img_{i:05d}.png", f"mask_{i:05d}.png"
            tensor_to_image(record.image).save(out / img_name)
            mask_u8 = (record.gt_mask[0].numpy() * 255).astype(np.uint8)
            Image.fromarray(mask_u8, mode="L").save(out / mask_name)
            fh.write(json.dumps({"file": img_name, "seed": record_seed, "gt_mask_file": mask_name}) + "\n")
    return manifest


def load_manifest_dataset(manifest: str | Path) -> list[DatasetRecord]:
    """Read a synthetic dataset back from its manifest, in manifest order."""
    manifest = Path(manifest)
    root = manifest.parent
    records = []
    with manifest.open() as fh:
        for line in fh:
            entry = json.loads(line)
            image = image_to_tensor(Image.open(root / entry["file"]))
            gt = None
            if entry.get("gt_mask_file"):
                arr = np.asarray(Image.open(root / entry["gt_mask_file"]).convert("L"))
                gt = torch.from_numpy((arr > 127).astype(np.float32))[None]
            records.append(DatasetRecord(image=image, gt_mask=gt, source=entry["file"]))
    if not records:
        raise ValueError(f"manifest {manifest} lists no records")
    return records


def augment_real(image: torch.Tensor, resolution: int, rng: torch.Generator) -> torch.Tensor:
    """Resize to a 1.125x square then take a uniform random crop at `resolution`."""
    if image.shape[-2] < resolution or image.shape[-1] < resolution:
        raise ValueError(
            f"input {tuple(image.shape)} smaller than target resolution {resolution}"
        )
    big = round(1.125 * resolution)
    resized = torch.nn.functional.interpolate(
        image[None], size=(big, big), mode="bilinear", align_corners=False, antialias=True
    )[0]
    span = big - resolution + 1
    off = torch.randint(0, span, (2,), generator=rng)
    oy, ox = int(off[0]), int(off[1])
    return resized[..., oy : oy + resolution, ox : ox + resolution]


def resize_direct(image: torch.Tensor, resolution: int) -> torch.Tensor:
    """Ablation (no random crops): plain resize to the target resolution."""
    return torch.nn.functional.interpolate(
        image[None], size=(resolution, resolution), mode="bilinear", align_corners=False, antialias=True
    )[0]


def jitter_contrast(
    background: torch.Tensor, range_: tuple[float, float], rng: torch.Generator
) -> torch.Tensor:
    """Scale each image's deviation from its mean by c ~ U(lo, hi), then clamp.

    Accepts (3, H, W) or a batch (B, 3, H, W); one c per image.
    """
    lo, hi = range_
    if not (0 < lo <= hi):
        raise ConfigError(f"invalid contrast range {range_}")
    batched = background.ndim == 4
    x = background if batched else background[None]
    c = lo + (hi - lo) * torch.rand((x.shape[0], 1, 1, 1), generator=rng, dtype=x.dtype)
    mu = x.mean(dim=(1, 2, 3), keepdim=True)
    out = torch.clamp(mu + c * (x - mu), -1.0, 1.0)
    return out if batched else out[0]


def load_image_folder(
    path: str | Path, resolution: int, limit: int | None = None
) -> list[DatasetRecord]:
    """Images from a folder, sorted by filename; undecodable files are skipped."""
    root = Path(path)
    records = []
    for file in sorted(p for p in root.iterdir() if p.is_file()):
        if limit is not None and len(records) >= limit:
            break
        try:
            img = Image.open(file)
            img.load()
        except Exception:
            log.warning("skipping non-image file %s", file)
            continue
        tensor = image_to_tensor(img)
        if tensor.shape[-2] < resolution or tensor.shape[-1] < resolution:
            tensor = resize_direct(tensor, resolution)
        records.append(DatasetRecord(image=tensor, gt_mask=None, source=file.name))
    if not records:
        raise ValueError(f"no decodable images found in {root}")
    return records
