"""Command-line entry points binding the modules into reproducible runs.

Every command writes a run_manifest.json into its output directory containing
the full config snapshot, the seed, and a content hash of the package source;
re-running from that manifest reproduces the run exactly.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import click
import torch
import yaml
from PIL import Image

from .data import SynthParams, build_synth_dataset, load_image_folder, load_manifest_dataset
from .errors import ConfigError
from .evaluation import (
    ablation_config_delta,
    emit_report,
    evaluate_masks,
    run_ablation,
    save_montage,
    segment_images,
)
from .presets import get_preset
from .train import EncoderTrainConfig, TrainConfig, train_encoder, train_gan

log = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_RUNTIME = 2


def code_version() -> str:
    """Content hash of the package source files."""
    pkg = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def resolve_out_dir(out_dir: str) -> Path:
    root = os.environ.get("SHIFTSEG_OUT_ROOT")
    path = Path(out_dir)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_config(config_file: str | None, preset: str | None, seed: int | None) -> dict:
    if config_file is None and preset is None:
        raise ConfigError("provide --config or --preset")
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        if path.suffix == ".json":
            payload = json.loads(path.read_text())
            config = payload["config"] if "config" in payload else payload  # accept a run manifest
        else:
            config = yaml.safe_load(path.read_text())
        if not isinstance(config, dict):
            raise ConfigError(f"config file {path} does not contain a mapping")
    else:
        config = get_preset(preset)
    if seed is not None:
        for section in ("train", "encoder"):
            if section in config:
                config[section]["seed"] = seed
        if "synth" in config:
            config["synth"].setdefault("params", {})["seed"] = seed
    return config


def config_from_manifest(manifest_path: str | Path) -> dict:
    return json.loads(Path(manifest_path).read_text())["config"]


def write_manifest(out: Path, command: str, config: dict, outputs: list[str], started: str) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": _active_seed(config),
        "code_version": code_version(),
        "out_dir": str(out),
        "outputs": outputs,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _active_seed(config: dict) -> int:
    for section in ("train", "encoder"):
        if section in config and "seed" in config[section]:
            return config[section]["seed"]
    return config.get("synth", {}).get("params", {}).get("seed", 0)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def load_records(data: str, resolution: int):
    path = Path(data)
    if path.is_file() and path.suffix == ".jsonl":
        return load_manifest_dataset(path)
    if (path / "manifest.jsonl").exists():
        return load_manifest_dataset(path / "manifest.jsonl")
    return load_image_folder(path, resolution)


@click.group()
def cli():
    """Unsupervised object segmentation via layered-scene GANs."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")


config_opt = click.option("--config", "config_file", default=None, help="YAML config file (or a run manifest JSON)")
preset_opt = click.option("--preset", default=None, help="named preset, e.g. synth-32")
seed_opt = click.option("--seed", type=int, default=None, help="override the config seed")
out_opt = click.option("--out-dir", required=True, help="output directory (relative to $SHIFTSEG_OUT_ROOT if set)")


@cli.command()
@config_opt
@preset_opt
@seed_opt
@out_opt
def synth(config_file, preset, seed, out_dir):
    """Generate a synthetic-scenes dataset with ground-truth masks."""
    config = load_config(config_file, preset, seed)
    if "synth" not in config:
        raise ConfigError("config has no 'synth' section")
    section = config["synth"]
    params_dict = dict(section.get("params", {}))
    if "object_scale_range" in params_dict:
        params_dict["object_scale_range"] = tuple(params_dict["object_scale_range"])
    try:
        params = SynthParams(**params_dict)
    except TypeError as exc:
        raise ConfigError(f"invalid synth params: {exc}") from exc
    n = int(section.get("n_images", 2000))
    out = resolve_out_dir(out_dir)
    started = _now()
    manifest = build_synth_dataset(n, params, out)
    write_manifest(out, "synth", config, [str(manifest)], started)
    click.echo(f"wrote {n} records to {out}")


@cli.command("train-gan")
@config_opt
@preset_opt
@seed_opt
@out_opt
@click.option("--data", required=True, help="dataset manifest or image folder")
@click.option("--resume", is_flag=True, help="continue from the last checkpoint")
def train_gan_cmd(config_file, preset, seed, out_dir, data, resume):
    """Train the layered generator pair against the discriminator."""
    config = load_config(config_file, preset, seed)
    if "train" not in config:
        raise ConfigError("config has no 'train' section")
    train_config = TrainConfig.from_dict(config["train"])
    records = load_records(data, train_config.resolution)
    out = resolve_out_dir(out_dir)
    started = _now()
    ckpt = train_gan(train_config, records, out, resume=resume)
    write_manifest(out, "train-gan", config, [str(ckpt), str(out / "metrics.jsonl")], started)
    click.echo(f"checkpoint: {ckpt}")


@cli.command("train-encoder")
@config_opt
@preset_opt
@seed_opt
@out_opt
@click.option("--gan-checkpoint", required=True, help="trained GAN checkpoint")
@click.option("--data", required=True, help="dataset manifest or image folder")
@click.option("--limit", type=int, default=None, help="train encoders for the first N images only")
def train_encoder_cmd(config_file, preset, seed, out_dir, gan_checkpoint, data, limit):
    """Train per-chunk encoders against the frozen generator."""
    config = load_config(config_file, preset, seed)
    if "encoder" not in config:
        raise ConfigError("config has no 'encoder' section")
    enc_config = EncoderTrainConfig.from_dict(config["encoder"])
    resolution = TrainConfig.from_dict(config["train"]).resolution if "train" in config else 32
    records = load_records(data, resolution)
    if limit is not None:
        records = records[:limit]
    out = resolve_out_dir(out_dir)
    started = _now()
    paths = train_encoder(enc_config, gan_checkpoint, records, out)
    curves = out / "chunk_losses.jsonl"
    with curves.open("w") as fh:
        for path in paths:
            payload = torch.load(path, weights_only=False)
            fh.write(json.dumps({"chunk_id": payload["chunk_id"], "loss_history": payload["loss_history"]}) + "\n")
    write_manifest(out, "train-encoder", config, [str(p) for p in paths] + [str(curves)], started)
    click.echo(f"trained {len(paths)} chunk encoders into {out}")


@cli.command()
@out_opt
@click.option("--gan-checkpoint", required=True)
@click.option("--encoders", required=True, help="directory of encoder_chunk*.pt checkpoints")
@click.option("--data", required=True)
def evaluate(out_dir, gan_checkpoint, encoders, data):
    """Segment a dataset and report mIoU when ground truth is available."""
    enc_paths = sorted(Path(encoders).glob("encoder_chunk*.pt"))
    if not enc_paths:
        raise ConfigError(f"no encoder checkpoints found in {encoders}")
    records = load_records(data, 32)
    out = resolve_out_dir(out_dir)
    started = _now()
    masks, _, recons = segment_images(enc_paths, gan_checkpoint, records)
    mask_dir = out / "masks"
    mask_dir.mkdir(exist_ok=True)
    for i, mask in enumerate(masks):
        arr = (mask[0].numpy() * 255).astype("uint8")
        Image.fromarray(arr, mode="L").save(mask_dir / f"mask_{i:05d}.png")
    montage = save_montage(records, masks, recons, out / "montage.png")
    outputs = [str(mask_dir), str(montage)]
    if all(r.gt_mask is not None for r in records):
        report = evaluate_masks(masks, records, setting_id="eval")
        table = emit_report([report], out / "report.csv")
        outputs.append(str(table))
        click.echo(f"mIoU {report.miou:.4f} (reference {report.reference_miou:.4f}) over {report.n_images} images")
    else:
        click.echo("no ground-truth masks in dataset: wrote masks and montage only, mIoU omitted")
    write_manifest(out, "evaluate", {"data": str(data)}, outputs, started)


@cli.command()
@config_opt
@preset_opt
@seed_opt
@out_opt
@click.option("--data", required=True)
@click.option("--settings", required=True, help="comma-separated ablation ids, e.g. a,b,d")
@click.option("--eval-count", type=int, default=200, help="images to segment per setting")
def ablate(config_file, preset, seed, out_dir, data, settings, eval_count):
    """Run ablation settings and emit a combined report table."""
    config = load_config(config_file, preset, seed)
    if "train" not in config:
        raise ConfigError("config has no 'train' section")
    base = TrainConfig.from_dict(config["train"])
    enc_config = (
        EncoderTrainConfig.from_dict(config["encoder"]) if "encoder" in config else EncoderTrainConfig(seed=base.seed)
    )
    setting_ids = [s.strip() for s in settings.split(",") if s.strip()]
    for setting in setting_ids:  # validate before any expensive work
        ablation_config_delta(setting, base.resolution)
    records = load_records(data, base.resolution)
    out = resolve_out_dir(out_dir)
    started = _now()
    reports = []
    for setting in setting_ids:
        report, _ = run_ablation(setting, base, records, out, enc_config, eval_count=eval_count)
        reports.append(report)
    table = emit_report(reports, out / "ablation_report.csv")
    write_manifest(out, "ablate", config, [str(table)], started)
    click.echo(f"combined report: {table}")


def main():
    try:
        cli.main(standalone_mode=False)
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    except click.exceptions.Abort:
        sys.exit(EXIT_USAGE)
    except Exception as exc:  # runtime failure
        log.exception("command failed")
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
