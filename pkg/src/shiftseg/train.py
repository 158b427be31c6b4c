"""Training drivers: adversarial optimization of the layered generator against
the discriminator on shift-perturbed composites, and per-chunk encoder training
against the frozen generator.

Determinism: every random draw a step makes comes from a generator seeded by
(master seed, stream label, step index). Training is therefore a pure function
of (config, dataset) and resuming from a checkpoint reproduces an
uninterrupted run exactly, with no RNG state stored anywhere.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import torch

from .compose import LayeredScene, compose, compose_shifted, sample_shift
from .data import DatasetRecord, augment_real, jitter_contrast, resize_direct
from .errors import ConfigError
from .losses import (
    LossWeights,
    autoencoder_loss,
    generator_loss,
    gradient_penalty,
    mask_binary_loss,
    mask_size_loss,
)
from .nets import (
    Discriminator,
    Encoder,
    GeneratorPair,
    SingleTrunkGenerator,
    generate_layers_from_codes,
    sample_latent,
)

__all__ = [
    "TrainConfig",
    "EncoderTrainConfig",
    "TrainState",
    "seed_stream",
    "new_state",
    "gan_train_step",
    "train_gan",
    "train_encoder",
    "save_checkpoint",
    "load_checkpoint",
    "load_encoder_checkpoint",
    "CHECKPOINT_FORMAT",
]

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "shiftseg-checkpoint-v1"
ENCODER_CHECKPOINT_FORMAT = "shiftseg-encoder-v1"


def seed_stream(master_seed: int, label: str) -> torch.Generator:
    """Named, reproducible RNG stream derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return torch.Generator().manual_seed(int.from_bytes(digest[:8], "big") >> 1)


@dataclass(frozen=True)
class TrainConfig:
    resolution: int = 32
    batch_size: int = 32
    latent_dim: int = 64
    delta: Optional[int] = None  # None -> round(0.125 * resolution)
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.001
    beta1: float = 0.0
    beta2: float = 0.99
    total_real_images: int = 160_000
    contrast_jitter: Optional[tuple[float, float]] = None
    no_random_crop: bool = False
    single_generator: bool = False
    disc_steps: int = 1
    base_channels: int = 32
    feature_resolution: int = 8
    checkpoint_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (gradient penalty pairs real with fake)")
        if self.shift_range >= self.resolution / 2:
            raise ConfigError(
                f"shift range {self.shift_range} must be < resolution/2 = {self.resolution / 2}"
            )
        if self.total_real_images < self.batch_size:
            raise ConfigError("total_real_images must cover at least one batch")

    @property
    def shift_range(self) -> int:
        return round(0.125 * self.resolution) if self.delta is None else self.delta

    @property
    def total_steps(self) -> int:
        return math.ceil(self.total_real_images / self.batch_size)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["contrast_jitter"] is not None:
            d["contrast_jitter"] = list(d["contrast_jitter"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if d.get("contrast_jitter") is not None:
            d["contrast_jitter"] = tuple(d["contrast_jitter"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid training config: {exc}") from exc


@dataclass(frozen=True)
class EncoderTrainConfig:
    chunk_size: int = 100
    iterations: int = 1000
    batch_size: int = 50
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    code_count: int = 2
    base_channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.chunk_size < 1 or self.iterations < 1:
            raise ConfigError("chunk_size and iterations must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderTrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid encoder config: {exc}") from exc


@dataclass
class TrainState:
    gen: torch.nn.Module
    disc: Discriminator
    opt_gen: torch.optim.Optimizer
    opt_disc: torch.optim.Optimizer
    config: TrainConfig
    step: int = 0


def new_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(int(seed_stream(config.seed, "init").initial_seed()))
    gen_cls = SingleTrunkGenerator if config.single_generator else GeneratorPair
    gen = gen_cls(config.latent_dim, config.resolution, config.base_channels)
    disc = Discriminator(config.resolution, config.base_channels, config.feature_resolution)
    opt_gen = torch.optim.Adam(
        gen.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2)
    )
    opt_disc = torch.optim.Adam(
        disc.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2)
    )
    return TrainState(gen=gen, disc=disc, opt_gen=opt_gen, opt_disc=opt_disc, config=config)


def _real_batch(records: Sequence[DatasetRecord], config: TrainConfig, rng: torch.Generator) -> torch.Tensor:
    idx = torch.randint(0, len(records), (config.batch_size,), generator=rng)
    images = []
    for i in idx.tolist():
        img = records[i].image
        if config.no_random_crop:
            images.append(resize_direct(img, config.resolution))
        else:
            images.append(augment_real(img, config.resolution, rng))
    return torch.stack(images)


def _fake_batch(state: TrainState, rng: torch.Generator, detach: bool) -> tuple[torch.Tensor, LayeredScene]:
    """Fresh shifted composites; shifts are drawn after the generator forward."""
    config = state.config
    z = sample_latent(config.batch_size, config.latent_dim, rng)
    if detach:
        with torch.no_grad():
            scene = state.gen(z)
    else:
        scene = state.gen(z)
    background = scene.background
    if config.contrast_jitter is not None:
        background = jitter_contrast(background, config.contrast_jitter, rng)
    composites = []
    for i in range(config.batch_size):
        shift = sample_shift(config.shift_range, rng)
        per_sample = LayeredScene(
            background=background[i], foreground=scene.foreground[i], mask=scene.mask[i]
        )
        composites.append(compose_shifted(per_sample, shift, max_shift=config.shift_range))
    return torch.stack(composites), scene


def _check_finite(value: torch.Tensor, what: str, dump: dict, dump_dir: Optional[Path], step: int):
    if torch.isfinite(value).all():
        return
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        path = dump_dir / f"diagnostic_step{step:06d}.pt"
        torch.save(dump, path)
        raise RuntimeError(f"non-finite {what} at step {step}; offending batch dumped to {path}")
    raise RuntimeError(f"non-finite {what} at step {step}")


def gan_train_step(
    state: TrainState,
    records: Sequence[DatasetRecord],
    step: int,
    dump_dir: Optional[Path] = None,
) -> dict:
    """One discriminator update followed by one generator update."""
    config = state.config
    w = config.weights
    metrics: dict = {"step": step}

    for d_sub in range(config.disc_steps):
        rng = seed_stream(config.seed, f"disc:{step}:{d_sub}")
        real = _real_batch(records, config, rng)
        fake, _ = _fake_batch(state, rng, detach=True)
        real_scores = state.disc(real)
        fake_scores = state.disc(fake)
        gp = gradient_penalty(state.disc, real, fake, rng)
        drift = w.epsilon_drift * (real_scores**2).mean()
        wasserstein = fake_scores.mean() - real_scores.mean()
        d_loss = wasserstein + w.lambda_gp * gp + drift
        _check_finite(d_loss, "discriminator loss", {"real": real, "fake": fake}, dump_dir, step)
        state.opt_disc.zero_grad()
        d_loss.backward()
        state.opt_disc.step()

    rng = seed_stream(config.seed, f"gen:{step}")
    fake, scene = _fake_batch(state, rng, detach=False)
    scores = state.disc(fake)
    size_term = mask_size_loss(scene.mask, w.eta)
    binary_term = mask_binary_loss(scene.mask)
    g_loss = -scores.mean() + w.gamma1 * size_term + w.gamma2 * binary_term
    _check_finite(g_loss, "generator loss", {"fake": fake.detach()}, dump_dir, step)
    state.opt_gen.zero_grad()
    g_loss.backward()
    state.opt_gen.step()

    metrics.update(
        d_loss=float(d_loss.detach()),
        g_loss=float(g_loss.detach()),
        g_adv=float(-scores.detach().mean()),
        wasserstein=float(wasserstein.detach()),
        L_size=float(size_term.detach()),
        L_binary=float(binary_term.detach()),
        gp=float(gp.detach()),
        drift=float(drift.detach()),
        mean_mask=float(scene.mask.detach().mean()),
    )
    state.step = step + 1
    return metrics


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": state.config.to_dict(),
            "step": state.step,
            "gen": state.gen.state_dict(),
            "disc": state.disc.state_dict(),
            "opt_gen": state.opt_gen.state_dict(),
            "opt_disc": state.opt_disc.state_dict(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> TrainState:
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unrecognized checkpoint format in {path}: {payload.get('format')!r}")
    config = TrainConfig.from_dict(payload["config"])
    state = new_state(config)
    state.gen.load_state_dict(payload["gen"])
    state.disc.load_state_dict(payload["disc"])
    state.opt_gen.load_state_dict(payload["opt_gen"])
    state.opt_disc.load_state_dict(payload["opt_disc"])
    state.step = payload["step"]
    return state


def train_gan(
    config: TrainConfig,
    records: Sequence[DatasetRecord],
    out_dir: str | Path,
    resume: bool = False,
    log_every: int = 50,
) -> Path:
    """Run the adversarial training loop; returns the final checkpoint path."""
    if not records:
        raise ValueError("dataset is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.pt"
    metrics_path = out / "metrics.jsonl"

    if resume and ckpt_path.exists():
        state = load_checkpoint(ckpt_path)
        if state.config != config:
            raise ConfigError("resume config does not match the checkpointed config")
        log.info("resuming at step %d", state.step)
    else:
        state = new_state(config)
        metrics_path.unlink(missing_ok=True)

    with metrics_path.open("a") as metrics_file:
        for step in range(state.step, config.total_steps):
            metrics = gan_train_step(state, records, step, dump_dir=out)
            metrics_file.write(json.dumps(metrics) + "\n")
            if (step + 1) % log_every == 0:
                metrics_file.flush()
                log.info(
                    "step %d/%d d_loss=%.3f g_loss=%.3f mean_mask=%.3f",
                    step + 1, config.total_steps, metrics["d_loss"], metrics["g_loss"],
                    metrics["mean_mask"],
                )
            if (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(state, ckpt_path)
    save_checkpoint(state, ckpt_path)
    return ckpt_path


def _parameter_fingerprint(module: torch.nn.Module) -> bytes:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.digest()


def chunk_indices(n_images: int, chunk_size: int) -> list[list[int]]:
    return [list(range(i, min(i + chunk_size, n_images))) for i in range(0, n_images, chunk_size)]


def train_encoder(
    enc_config: EncoderTrainConfig,
    gan_checkpoint: str | Path,
    records: Sequence[DatasetRecord],
    out_dir: str | Path,
) -> list[Path]:
    """Train one independently initialized encoder per chunk of images.

    The generator and discriminator are loaded frozen; only encoder
    parameters are updated. Returns one checkpoint path per chunk.
    """
    state = load_checkpoint(gan_checkpoint)
    gen, disc = state.gen, state.disc
    for p in list(gen.parameters()) + list(disc.parameters()):
        p.requires_grad_(False)
    frozen_before = _parameter_fingerprint(gen)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = state.config
    paths = []
    for chunk_id, indices in enumerate(chunk_indices(len(records), enc_config.chunk_size)):
        images = torch.stack([records[i].image for i in indices])
        torch.manual_seed(int(seed_stream(enc_config.seed, f"enc-init:{chunk_id}").initial_seed()))
        enc = Encoder(
            resolution=config.resolution,
            latent_dim=config.latent_dim,
            code_count=enc_config.code_count,
            base=enc_config.base_channels,
        )
        opt = torch.optim.Adam(
            enc.parameters(), lr=enc_config.learning_rate, betas=(enc_config.beta1, enc_config.beta2)
        )

        def chunk_loss() -> float:
            with torch.no_grad():
                scene = generate_layers_from_codes(gen, enc(images))
                return float(autoencoder_loss(images, compose(scene), disc.features))

        history = [{"iteration": 0, "loss": chunk_loss()}]
        batch = min(enc_config.batch_size, len(indices))
        for it in range(enc_config.iterations):
            rng = seed_stream(enc_config.seed, f"enc:{chunk_id}:{it}")
            sel = torch.randint(0, len(indices), (batch,), generator=rng)
            x = images[sel]
            scene = generate_layers_from_codes(gen, enc(x))
            loss = autoencoder_loss(x, compose(scene), disc.features)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite encoder loss in chunk {chunk_id} at iteration {it}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append({"iteration": enc_config.iterations, "loss": chunk_loss()})
        log.info(
            "chunk %d: loss %.4f -> %.4f", chunk_id, history[0]["loss"], history[-1]["loss"]
        )

        path = out / f"encoder_chunk{chunk_id:04d}.pt"
        torch.save(
            {
                "format": ENCODER_CHECKPOINT_FORMAT,
                "enc_config": enc_config.to_dict(),
                "gan_config": config.to_dict(),
                "chunk_id": chunk_id,
                "image_indices": indices,
                "image_sources": [records[i].source for i in indices],
                "encoder": enc.state_dict(),
                "loss_history": history,
            },
            path,
        )
        paths.append(path)

    if _parameter_fingerprint(gen) != frozen_before:
        raise RuntimeError("generator parameters changed during encoder training")
    return paths


def load_encoder_checkpoint(path: str | Path) -> tuple[Encoder, dict]:
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != ENCODER_CHECKPOINT_FORMAT:
        raise ConfigError(f"unrecognized encoder checkpoint format in {path}")
    enc_config = EncoderTrainConfig.from_dict(payload["enc_config"])
    gan_config = TrainConfig.from_dict(payload["gan_config"])
    enc = Encoder(
        resolution=gan_config.resolution,
        latent_dim=gan_config.latent_dim,
        code_count=enc_config.code_count,
        base=enc_config.base_channels,
    )
    enc.load_state_dict(payload["encoder"])
    return enc, payload
