"""Segmentation evaluation: mask binarization, IoU metrics, encoder-based
segmentation of images, the ablation harness, and report/figure output."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .compose import ShapeMismatchError, compose
from .data import DatasetRecord, tensor_to_image
from .errors import ConfigError
from .losses import LossWeights
from .nets import generate_layers_from_codes
from .train import (
    EncoderTrainConfig,
    TrainConfig,
    load_checkpoint,
    load_encoder_checkpoint,
    train_encoder,
    train_gan,
)

__all__ = [
    "SegmentationReport",
    "binarize_mask",
    "iou",
    "segment_images",
    "reference_report",
    "evaluate_masks",
    "ABLATION_SETTINGS",
    "ablation_config_delta",
    "apply_ablation_setting",
    "run_ablation",
    "emit_report",
    "save_montage",
]

log = logging.getLogger(__name__)

ABLATION_SETTINGS = ("a", "b", "c", "d", "e", "f", "g", "h")


@dataclass
class SegmentationReport:
    per_image_iou: list[float]
    miou: float
    reference_miou: float
    mean_mask_size: float
    n_images: int
    setting_id: str = ""


def binarize_mask(mask: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Strictly-greater-than threshold: entries > threshold become 1, else 0."""
    return (mask > threshold).to(mask.dtype)


def iou(a: torch.Tensor, b: torch.Tensor) -> float:
    """Intersection over union of two binary masks; both empty counts as 1."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    a_bool, b_bool = a.bool(), b.bool()
    union = (a_bool | b_bool).sum().item()
    if union == 0:
        return 1.0
    return (a_bool & b_bool).sum().item() / union


def segment_images(
    encoder_ckpts: Sequence[str | Path],
    gan_checkpoint: str | Path,
    records: Sequence[DatasetRecord],
    threshold: float = 0.5,
) -> tuple[list[torch.Tensor], list[torch.Tensor], list[torch.Tensor]]:
    """Segment each record with its chunk's encoder through the frozen generator.

    Returns (binary masks, raw masks, reconstructed composites), indexed like
    `records`. Every record index must be covered by exactly one encoder
    checkpoint's image_indices.
    """
    state = load_checkpoint(gan_checkpoint)
    gen = state.gen
    masks: list[Optional[torch.Tensor]] = [None] * len(records)
    raw: list[Optional[torch.Tensor]] = [None] * len(records)
    recons: list[Optional[torch.Tensor]] = [None] * len(records)
    for path in encoder_ckpts:
        enc, payload = load_encoder_checkpoint(path)
        indices = [i for i in payload["image_indices"] if i < len(records)]
        if not indices:
            continue
        images = torch.stack([records[i].image for i in indices])
        with torch.no_grad():
            scene = generate_layers_from_codes(gen, enc(images))
            composite = compose(scene)
        for j, i in enumerate(indices):
            raw[i] = scene.mask[j]
            masks[i] = binarize_mask(scene.mask[j], threshold)
            recons[i] = composite[j]
    missing = [i for i, m in enumerate(masks) if m is None]
    if missing:
        raise ConfigError(f"{len(missing)} images not covered by any chunk encoder (first: {missing[0]})")
    return masks, raw, recons


def reference_report(gts: Sequence[torch.Tensor], setting_id: str = "") -> SegmentationReport:
    """Baseline that predicts the full image: per-image IoU equals gt area fraction."""
    full = [iou(torch.ones_like(gt), gt) for gt in gts]
    return SegmentationReport(
        per_image_iou=full,
        miou=float(np.mean(full)),
        reference_miou=float(np.mean(full)),
        mean_mask_size=1.0,
        n_images=len(full),
        setting_id=setting_id,
    )


def evaluate_masks(
    masks: Sequence[torch.Tensor],
    records: Sequence[DatasetRecord],
    setting_id: str = "",
) -> SegmentationReport:
    """Score predicted binary masks against the records' ground truth."""
    gts = [r.gt_mask for r in records]
    if any(gt is None for gt in gts):
        raise ValueError("every record needs a ground-truth mask to evaluate")
    ious = [iou(m, gt) for m, gt in zip(masks, gts)]
    return SegmentationReport(
        per_image_iou=ious,
        miou=float(np.mean(ious)),
        reference_miou=float(np.mean([gt.mean().item() for gt in gts])),
        mean_mask_size=float(np.mean([m.mean().item() for m in masks])),
        n_images=len(ious),
        setting_id=setting_id,
    )


def ablation_config_delta(setting_id: str, resolution: int) -> dict:
    """The single documented config change each ablation setting applies."""
    deltas = {
        "a": {},
        "b": {"delta": 0},
        "c": {"delta": round(0.25 * resolution)},
        "d": {"contrast_jitter": (0.7, 1.3)},
        "e": {"no_random_crop": True},
        "f": {"gamma1": 10.0},
        "g": {"eta": 0.05},
        "h": {"single_generator": True},
    }
    if setting_id not in deltas:
        raise ConfigError(f"unknown ablation setting {setting_id!r}; expected one of {ABLATION_SETTINGS}")
    return deltas[setting_id]


def apply_ablation_setting(config: TrainConfig, setting_id: str) -> TrainConfig:
    delta = ablation_config_delta(setting_id, config.resolution)
    weight_fields = {f.name for f in dataclasses.fields(LossWeights)}
    weight_changes = {k: v for k, v in delta.items() if k in weight_fields}
    other = {k: v for k, v in delta.items() if k not in weight_fields}
    if weight_changes:
        other["weights"] = replace(config.weights, **weight_changes)
    return replace(config, **other)


def run_ablation(
    setting_id: str,
    base_config: TrainConfig,
    records: Sequence[DatasetRecord],
    out_dir: str | Path,
    enc_config: EncoderTrainConfig | None = None,
    eval_count: int | None = None,
) -> tuple[SegmentationReport, Path]:
    """Train + evaluate one ablation setting; returns its report and run dir."""
    config = apply_ablation_setting(base_config, setting_id)
    out = Path(out_dir) / f"setting_{setting_id}"
    out.mkdir(parents=True, exist_ok=True)
    enc_config = enc_config or EncoderTrainConfig(seed=config.seed)
    ckpt = train_gan(config, records, out / "gan", resume=True)
    eval_records = records[: eval_count or len(records)]
    enc_paths = train_encoder(enc_config, ckpt, eval_records, out / "encoders")
    masks, _, recons = segment_images(enc_paths, ckpt, eval_records)
    report = evaluate_masks(masks, eval_records, setting_id=setting_id)
    save_montage(eval_records, masks, recons, out / "montage.png")
    log.info("setting %s: mIoU %.3f (reference %.3f)", setting_id, report.miou, report.reference_miou)
    return report, out


def emit_report(reports: Sequence[SegmentationReport], path: str | Path) -> Path:
    """Table-style CSV, one row per setting, sorted by setting id."""
    if not reports:
        raise ValueError("need at least one report")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "mIoU", "reference mIoU", "mean mask size", "n images"])
        for report in sorted(reports, key=lambda r: r.setting_id):
            writer.writerow(
                [
                    report.setting_id,
                    f"{report.miou:.4f}",
                    f"{report.reference_miou:.4f}",
                    f"{report.mean_mask_size:.4f}",
                    report.n_images,
                ]
            )
    return path


def save_montage(
    records: Sequence[DatasetRecord],
    masks: Sequence[torch.Tensor],
    recons: Sequence[torch.Tensor],
    path: str | Path,
    rows: int = 4,
    cols: int = 4,
) -> Path:
    """Grid figure: input, reconstruction, mask, and overlay per cell column."""
    n = min(rows * cols, len(records))
    res = records[0].image.shape[-1]
    cell_w, cell_h = 4 * res, res
    sheet = Image.new("RGB", (cols * cell_w, rows * cell_h), "black")
    for idx in range(n):
        r, c = divmod(idx, cols)
        image = records[idx].image
        mask = masks[idx]
        overlay = image.clone()
        overlay[0] = torch.where(mask[0] > 0.5, torch.ones_like(overlay[0]), overlay[0])
        cell = Image.new("RGB", (cell_w, cell_h))
        cell.paste(tensor_to_image(image), (0, 0))
        cell.paste(tensor_to_image(recons[idx]), (res, 0))
        cell.paste(tensor_to_image(mask.repeat(3, 1, 1) * 2 - 1), (2 * res, 0))
        cell.paste(tensor_to_image(overlay), (3 * res, 0))
        sheet.paste(cell, (c * cell_w, r * cell_h))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sheet.save(path)
    return path
