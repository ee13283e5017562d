"""Synthetic scenes: determinism, codec compatibility, corruption purity, sampler weights."""

import numpy as np
import pytest

from dgen.codec import build_color_table, decode_instance, decode_semantic, encode_instance, encode_semantic
from dgen.errors import ConfigError, DataError
from dgen.metrics import ssim
from dgen.synthdata import (
    SceneParams,
    SyntheticDataset,
    TaskSampler,
    corrupt_dark,
    corrupt_noise,
    corrupt_rain,
    encode_target,
    generate_dataset,
    generate_scene,
    sample_batch,
)
from dgen.tasks import PANOPTIC_PAIR, TASKS


PARAMS = SceneParams()


def scenes_equal(a, b) -> bool:
    return (np.array_equal(a.image, b.image)
            and np.array_equal(a.semantic, b.semantic)
            and np.array_equal(a.instance, b.instance)
            and np.array_equal(a.depth, b.depth)
            and all(np.array_equal(a.corrupted[k], b.corrupted[k]) for k in a.corrupted))


class TestGenerateScene:
    def test_same_seed_bit_identical(self):
        assert scenes_equal(generate_scene(42, PARAMS), generate_scene(42, PARAMS))

    def test_different_seeds_differ(self):
        assert not scenes_equal(generate_scene(1, PARAMS), generate_scene(2, PARAMS))

    def test_instance_count_in_range(self):
        for seed in range(10):
            s = generate_scene(seed, PARAMS)
            n = len([i for i in np.unique(s.instance) if i != 0])
            assert PARAMS.min_shapes <= n <= PARAMS.max_shapes

    def test_every_shape_pixel_is_in_an_instance(self):
        for seed in range(10):
            s = generate_scene(seed, PARAMS)
            assert np.array_equal(s.semantic > 0, s.instance > 0)

    def test_depth_front_object_nearer(self):
        for seed in range(10):
            s = generate_scene(seed, PARAMS)
            inst_depths = {}
            for i in np.unique(s.instance):
                if i == 0:
                    continue
                vals = np.unique(s.depth[s.instance == i])
                assert len(vals) == 1
                inst_depths[i] = vals[0]
            # larger draw index = drawn later = in front = smaller depth
            ids = sorted(inst_depths)
            for a, b in zip(ids, ids[1:]):
                assert inst_depths[b] < inst_depths[a]
            assert all(v < PARAMS.depth_max for v in inst_depths.values())

    def test_background_is_max_depth(self):
        s = generate_scene(3, PARAMS)
        assert np.all(s.depth[s.instance == 0] == PARAMS.depth_max)

    def test_codec_round_trip_compatibility(self):
        table = build_color_table(PARAMS.num_classes)
        for seed in range(8):
            s = generate_scene(seed, PARAMS)
            assert np.array_equal(decode_semantic(encode_semantic(s.semantic, table), table),
                                  s.semantic)
            dec = decode_instance(encode_instance(s.instance, PARAMS.max_instances),
                                  PARAMS.max_instances)
            # same partition up to renumbering
            assert len(np.unique(dec)) == len(np.unique(s.instance))
            for i in np.unique(s.instance):
                assert len(np.unique(dec[s.instance == i])) == 1

    def test_invalid_params_rejected(self):
        with pytest.raises(ConfigError):
            SceneParams(min_shapes=1)
        with pytest.raises(ConfigError):
            SceneParams(max_shapes=10, max_instances=8)


class TestCorruptions:
    def test_noise_sigma_zero_identity(self, rng):
        img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        assert np.array_equal(corrupt_noise(img, 0.0, seed=1), img)

    def test_dark_unit_gain_identity(self, rng):
        img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        assert np.array_equal(corrupt_dark(img, gain=1.0, gamma=1.0), img)

    def test_corruptions_pure_in_seed(self, rng):
        img = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
        assert np.array_equal(corrupt_noise(img, 25, seed=9), corrupt_noise(img, 25, seed=9))
        assert np.array_equal(corrupt_rain(img, 0.5, seed=9), corrupt_rain(img, 0.5, seed=9))

    def test_noise_lowers_ssim(self, rng):
        img = rng.integers(40, 216, (24, 24, 3)).astype(np.uint8)
        noisy = corrupt_noise(img, 25.0, seed=3)
        assert ssim(noisy, img) < 1.0

    def test_shapes_and_range_preserved(self, rng):
        img = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        for out in (corrupt_noise(img, 25, seed=1), corrupt_rain(img, 0.7, seed=1),
                    corrupt_dark(img, 0.35)):
            assert out.shape == img.shape
            assert out.dtype == np.uint8

    def test_dark_darkens(self, rng):
        img = rng.integers(100, 256, (16, 16, 3)).astype(np.uint8)
        assert corrupt_dark(img, 0.35).mean() < img.mean()

    def test_parameter_validation(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ConfigError):
            corrupt_noise(img, -1.0)
        with pytest.raises(ConfigError):
            corrupt_rain(img, 1.5)
        with pytest.raises(ConfigError):
            corrupt_dark(img, 0.0)


class TestDatasetOnDisk:
    def test_generate_load_round_trip(self, tmp_path):
        generate_dataset(tmp_path / "ds", seed=5, counts={"train": 3, "val": 2}, params=PARAMS)
        ds = SyntheticDataset(tmp_path / "ds")
        assert len(ds.split_ids("train")) == 3
        assert len(ds.split_ids("val")) == 2
        s_disk = ds.load("train", ds.split_ids("train")[0])
        assert s_disk.image.shape == (PARAMS.condition_hw, PARAMS.condition_hw, 3)
        assert s_disk.semantic.shape == (PARAMS.target_hw, PARAMS.target_hw)

    def test_regeneration_bit_identical(self, tmp_path):
        generate_dataset(tmp_path / "a", seed=5, counts={"train": 2}, params=PARAMS)
        generate_dataset(tmp_path / "b", seed=5, counts={"train": 2}, params=PARAMS)
        for rel in ["manifest.json", "train/00000/input.png", "train/00000/sem.png",
                    "train/00001/depth.png", "train/00000/rain.png"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_depth_quantization_loss_is_tiny(self, tmp_path):
        generate_dataset(tmp_path / "ds", seed=7, counts={"train": 1}, params=PARAMS)
        ds = SyntheticDataset(tmp_path / "ds")
        s_disk = ds.load("train", "00000")
        s_mem = generate_scene(np.random.default_rng(  # same stream the generator used
            np.random.SeedSequence([7, 4, 0, 0])), PARAMS)
        assert np.max(np.abs(s_disk.depth - s_mem.depth)) < PARAMS.depth_range.span / 65535 + 1e-9

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(DataError):
            generate_dataset(tmp_path / "ds", seed=1, counts={"train": 0}, params=PARAMS)

    def test_missing_split_and_manifest_errors(self, tmp_path):
        with pytest.raises(DataError):
            SyntheticDataset(tmp_path / "nope")
        generate_dataset(tmp_path / "ds", seed=1, counts={"train": 1}, params=PARAMS)
        ds = SyntheticDataset(tmp_path / "ds")
        with pytest.raises(DataError):
            ds.split_ids("test")


class TestTaskSampler:
    def test_panoptic_pair_frequency_two_sevenths(self):
        sampler = TaskSampler()
        rng = np.random.default_rng(0)
        draws = sum(sampler.draw_source(rng) == "panoptic" for _ in range(100_000))
        assert abs(draws / 100_000 - 2.0 / 7.0) < 0.01

    def test_panoptic_splits_evenly_over_pair(self):
        sampler = TaskSampler()
        rng = np.random.default_rng(1)
        counts = {t: 0 for t in PANOPTIC_PAIR}
        n = 0
        for _ in range(50_000):
            source, instr = sampler.draw(rng)
            if source == "panoptic":
                counts[instr] += 1
                n += 1
        assert abs(counts[PANOPTIC_PAIR[0]] / n - 0.5) < 0.02

    def test_equal_weights_symmetric(self):
        sampler = TaskSampler({"a": 1.0, "b": 1.0})
        rng = np.random.default_rng(2)
        a = sum(sampler.draw_source(rng) == "a" for _ in range(100_000))
        assert abs(a / 100_000 - 0.5) < 0.01

    def test_invalid_weights_rejected(self):
        with pytest.raises(ConfigError):
            TaskSampler({"a": -1.0})
        with pytest.raises(ConfigError):
            TaskSampler({})


class TestSampleBatch:
    def test_batch_shapes_and_range(self, tmp_path):
        generate_dataset(tmp_path / "ds", seed=2, counts={"train": 4}, params=PARAMS)
        ds = SyntheticDataset(tmp_path / "ds")
        cond, target, tasks = sample_batch(ds, "train", TaskSampler(), 4, np.random.default_rng(0))
        assert cond.shape == (4, 3, PARAMS.condition_hw, PARAMS.condition_hw)
        assert target.shape == (4, 3, PARAMS.target_hw, PARAMS.target_hw)
        assert tasks.shape == (4,)
        assert cond.min() >= -1.0 and cond.max() <= 1.0
        assert target.min() >= -1.0 and target.max() <= 1.0

    def test_targets_are_codec_encodings(self, tmp_path):
        generate_dataset(tmp_path / "ds", seed=3, counts={"train": 2}, params=PARAMS)
        ds = SyntheticDataset(tmp_path / "ds")
        s = ds.load("train", "00000")
        enc = encode_target(s, "semantic_segmentation", ds.params)
        table = build_color_table(ds.params.num_classes)
        assert np.array_equal(decode_semantic(enc, table), s.semantic)
