import hashlib
import json
import os
from pathlib import Path

import pytest
import torch

from shiftseg.data import SynthParams, build_synth_dataset, load_manifest_dataset
from shiftseg.evaluation import run_ablation
from shiftseg.losses import mask_binary_loss
from shiftseg.nets import sample_latent
from shiftseg.presets import get_preset
from shiftseg.train import EncoderTrainConfig, TrainConfig, load_checkpoint, seed_stream

EVAL_COUNT = 200  # two encoder chunks per run
MASK_SAMPLE_COUNT = 1000

# one line per acceptance criterion, echoed after the run summary
acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


def _experiment_key(preset: dict) -> str:
    return hashlib.sha256(json.dumps(preset, sort_keys=True).encode()).hexdigest()[:16]


def _mask_statistics(checkpoint: Path) -> tuple[float, float]:
    """Mean mask value and binarization loss over fresh generator samples."""
    state = load_checkpoint(checkpoint)
    rng = seed_stream(123, "acceptance-mask-stats")
    means, binaries = [], []
    with torch.no_grad():
        for start in range(0, MASK_SAMPLE_COUNT, 100):
            z = sample_latent(100, state.config.latent_dim, rng)
            mask = state.gen(z).mask
            means.append(mask.mean().item())
            binaries.append(mask_binary_loss(mask).item())
    n = MASK_SAMPLE_COUNT // 100
    return sum(means) / n, sum(binaries) / n


@pytest.fixture(scope="session")
def shift_contrast_experiment(tmp_path_factory):
    """Full directional-reproduction experiment: default preset vs delta=0.

    Runs take tens of minutes on CPU; results are cached (keyed by the exact
    preset) in SHIFTSEG_ACCEPTANCE_DIR when set, since runs are deterministic.
    """
    preset = get_preset("synth-32")
    key = _experiment_key(preset)
    env_dir = os.environ.get("SHIFTSEG_ACCEPTANCE_DIR")
    root = Path(env_dir) if env_dir else tmp_path_factory.mktemp("acceptance")
    root.mkdir(parents=True, exist_ok=True)
    result_file = root / f"results_{key}.json"
    if result_file.exists():
        return json.loads(result_file.read_text())

    p = preset["synth"]["params"]
    params = SynthParams(
        resolution=p["resolution"],
        object_scale_range=tuple(p["object_scale_range"]),
        position_jitter=p["position_jitter"],
        seed=p["seed"],
    )
    data_dir = root / "data"
    if not (data_dir / "manifest.jsonl").exists():
        build_synth_dataset(preset["synth"]["n_images"], params, data_dir)
    records = load_manifest_dataset(data_dir / "manifest.jsonl")

    config = TrainConfig.from_dict(preset["train"])
    enc_config = EncoderTrainConfig.from_dict(preset["encoder"])
    results = {"key": key, "eta": config.weights.eta}
    for setting in ("a", "b"):
        report, out = run_ablation(setting, config, records, root, enc_config, eval_count=EVAL_COUNT)
        chunk_losses = []
        for ckpt in sorted((out / "encoders").glob("encoder_chunk*.pt")):
            history = torch.load(ckpt, weights_only=False)["loss_history"]
            chunk_losses.append((history[0]["loss"], history[-1]["loss"]))
        results[setting] = {
            "miou": report.miou,
            "reference_miou": report.reference_miou,
            "mean_mask_size": report.mean_mask_size,
            "n_images": report.n_images,
            "chunk_losses": chunk_losses,
        }
    mean_mask, binary = _mask_statistics(root / "setting_a" / "gan" / "checkpoint.pt")
    results["a"]["sampled_mean_mask"] = mean_mask
    results["a"]["sampled_binary_loss"] = binary
    result_file.write_text(json.dumps(results, indent=2))
    return results
