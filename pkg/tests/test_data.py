import json

import numpy as np
import pytest
import torch
from PIL import Image

from shiftseg.data import (
    SynthParams,
    augment_real,
    build_synth_dataset,
    image_to_tensor,
    jitter_contrast,
    load_image_folder,
    load_manifest_dataset,
    resize_direct,
    synth_scene,
    tensor_to_image,
)
from shiftseg.errors import ConfigError


class TestSynthScene:
    def test_mask_binary_and_mean_in_range(self):
        params = SynthParams(resolution=32, object_scale_range=(0.2, 0.3), seed=0)
        for seed in range(20):
            rec = synth_scene(params, np.random.default_rng(seed))
            gt = rec.gt_mask
            assert set(gt.unique().tolist()) <= {0.0, 1.0}
            assert 0.2 <= gt.mean().item() <= 0.3

    def test_fixed_seed_reproducible(self):
        params = SynthParams(resolution=32)
        a = synth_scene(params, np.random.default_rng(7))
        b = synth_scene(params, np.random.default_rng(7))
        assert torch.equal(a.image, b.image)
        assert torch.equal(a.gt_mask, b.gt_mask)

    def test_figure_ground_separable(self):
        # disjoint palettes: masked pixels must differ from the background texture
        params = SynthParams(resolution=32)
        for seed in range(10):
            rec = synth_scene(params, np.random.default_rng(seed))
            mask = rec.gt_mask[0].bool()
            # compare object pixels against the composited background elsewhere:
            # with warm-vs-cool palettes the red channel alone separates them
            fg_red = rec.image[0][mask]
            bg_red = rec.image[0][~mask]
            diff_frac = (fg_red[:, None] - bg_red[None, :]).abs().gt(0.1).float().mean()
            assert diff_frac > 0.9

    def test_shapes(self):
        rec = synth_scene(SynthParams(resolution=32), np.random.default_rng(0))
        assert rec.image.shape == (3, 32, 32)
        assert rec.gt_mask.shape == (1, 32, 32)
        assert rec.image.min() >= -1 and rec.image.max() <= 1

    def test_infeasible_scale_range_rejected(self):
        with pytest.raises(ConfigError):
            SynthParams(resolution=16, object_scale_range=(0.7, 0.9), position_jitter=4)


class TestBuildSynthDataset:
    def test_manifest_count_and_roundtrip(self, tmp_path):
        params = SynthParams(resolution=32, seed=3)
        manifest = build_synth_dataset(5, params, tmp_path / "ds")
        lines = manifest.read_text().strip().splitlines()
        assert len(lines) == 5
        entry = json.loads(lines[0])
        assert set(entry) == {"file", "seed", "gt_mask_file"}
        records = load_manifest_dataset(manifest)
        assert len(records) == 5
        assert all(r.gt_mask is not None for r in records)

    def test_rebuild_byte_identical(self, tmp_path):
        params = SynthParams(resolution=32, seed=9)
        m1 = build_synth_dataset(3, params, tmp_path / "a")
        m2 = build_synth_dataset(3, params, tmp_path / "b")
        for e1, e2 in zip(m1.read_text().splitlines(), m2.read_text().splitlines()):
            f1, f2 = json.loads(e1)["file"], json.loads(e2)["file"]
            assert (tmp_path / "a" / f1).read_bytes() == (tmp_path / "b" / f2).read_bytes()

    def test_mask_files_are_0_255(self, tmp_path):
        manifest = build_synth_dataset(1, SynthParams(resolution=32), tmp_path)
        entry = json.loads(manifest.read_text().splitlines()[0])
        arr = np.asarray(Image.open(tmp_path / entry["gt_mask_file"]))
        assert set(np.unique(arr)) <= {0, 255}

    def test_invalid_n_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            build_synth_dataset(0, SynthParams(resolution=32), tmp_path)


class TestAugmentReal:
    def test_output_shape_and_resize_rule(self):
        rng = torch.Generator().manual_seed(0)
        img = torch.rand(3, 64, 64) * 2 - 1
        out = augment_real(img, 64, rng)
        assert out.shape == (3, 64, 64)
        assert round(1.125 * 64) == 72  # crop offsets live in {0..8}^2

    def test_constant_image_stays_constant(self):
        rng = torch.Generator().manual_seed(1)
        img = torch.full((3, 64, 64), 0.25)
        out = augment_real(img, 32, rng)
        assert torch.allclose(out, torch.full((3, 32, 32), 0.25), atol=1e-5)

    def test_offsets_uniform_chi_square(self):
        res = 16
        span = round(1.125 * res) - res + 1  # 3x3 offset grid at res 16
        rng = torch.Generator().manual_seed(2)
        # reproduce the offset draw exactly as augment_real makes it
        n = 20_000
        counts = torch.zeros(span, span)
        for _ in range(n):
            off = torch.randint(0, span, (2,), generator=rng)
            counts[off[0], off[1]] += 1
        expected = n / span**2
        chi2 = ((counts - expected) ** 2 / expected).sum()
        dof = span**2 - 1
        assert chi2 < dof + 4 * (2 * dof) ** 0.5

    def test_undersized_input_raises(self):
        rng = torch.Generator().manual_seed(3)
        with pytest.raises(ValueError):
            augment_real(torch.zeros(3, 16, 16), 32, rng)


class TestJitterContrast:
    def test_identity_at_unit_contrast(self):
        img = torch.rand(3, 8, 8) * 1.6 - 0.8
        out = jitter_contrast(img, (1.0, 1.0), torch.Generator().manual_seed(0))
        assert torch.allclose(out, img, atol=1e-6)

    def test_constant_image_unchanged(self):
        img = torch.full((3, 8, 8), 0.4)
        out = jitter_contrast(img, (0.7, 1.3), torch.Generator().manual_seed(1))
        assert torch.allclose(out, img, atol=1e-6)

    def test_mean_preserved_without_clamping(self):
        rng = torch.Generator().manual_seed(2)
        img = torch.rand(4, 3, 8, 8) * 0.8 - 0.4  # safely inside [-1, 1]
        out = jitter_contrast(img, (0.7, 1.3), rng)
        assert torch.allclose(
            out.mean(dim=(1, 2, 3)), img.mean(dim=(1, 2, 3)), atol=1e-5
        )

    def test_output_within_valid_range(self):
        rng = torch.Generator().manual_seed(3)
        img = torch.rand(2, 3, 8, 8) * 2 - 1
        out = jitter_contrast(img, (0.7, 1.3), rng)
        assert out.min() >= -1 and out.max() <= 1

    def test_invalid_range_rejected(self):
        with pytest.raises(ConfigError):
            jitter_contrast(torch.zeros(3, 4, 4), (0.0, 1.3), torch.Generator())


class TestLoadImageFolder:
    def test_folder_loading_order_and_limit(self, tmp_path):
        for name in ["c.png", "a.png", "b.png"]:
            tensor_to_image(torch.rand(3, 40, 40) * 2 - 1).save(tmp_path / name)
        records = load_image_folder(tmp_path, 32)
        assert [r.source for r in records] == ["a.png", "b.png", "c.png"]
        assert all(r.gt_mask is None for r in records)
        limited = load_image_folder(tmp_path, 32, limit=2)
        assert [r.source for r in limited] == ["a.png", "b.png"]

    def test_non_image_skipped(self, tmp_path):
        tensor_to_image(torch.rand(3, 40, 40)).save(tmp_path / "ok.png")
        (tmp_path / "junk.txt").write_text("not an image")
        records = load_image_folder(tmp_path, 32)
        assert len(records) == 1

    def test_empty_folder_raises(self, tmp_path):
        with pytest.raises(ValueError):
            load_image_folder(tmp_path, 32)


class TestImageRoundTrip:
    def test_tensor_image_tensor(self):
        t = torch.rand(3, 16, 16) * 2 - 1
        back = image_to_tensor(tensor_to_image(t))
        assert (back - t).abs().max() < 1 / 127.5

    def test_resize_direct_shape(self):
        out = resize_direct(torch.rand(3, 50, 70), 32)
        assert out.shape == (3, 32, 32)
