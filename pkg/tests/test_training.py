"""Training loop tests on small synthetic corpora."""

import numpy as np
import pytest
import torch

from glandscreen.corpus import scan_corpus, stratified_split
from glandscreen.models import ModelConfig, load_checkpoint
from glandscreen.patches import AugmentConfig, PatchParams
from glandscreen.pipeline import PreprocessOptions
from glandscreen.training import (
    PatchDataset,
    RunManifest,
    TrainConfig,
    draw_epoch_indices,
    evaluate_whole_images,
    train,
)

from synth import color_separable_corpus

MODEL_CFG = ModelConfig(backbone="small_cnn", pretrained=False)
PREP = PreprocessOptions(normalize=False, patch_params=PatchParams(min_region_area=2000))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    color_separable_corpus(root, n_per_class=15, seed=1)
    samples = scan_corpus(root)
    return stratified_split(samples, 0.8, seed=0)


def quiet(_msg):
    pass


class TestSampling:
    def test_draw_indices_deterministic(self):
        weights = np.array([1.0, 2.0, 1.0, 4.0])
        a = draw_epoch_indices(weights, 100, seed=5, epoch=0)
        b = draw_epoch_indices(weights, 100, seed=5, epoch=0)
        c = draw_epoch_indices(weights, 100, seed=5, epoch=1)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_weighted_draw_frequencies(self):
        # 808 vs 984 class counts; expected draw share 0.5 each.
        weights = np.array([1 / 808] * 808 + [1 / 984] * 984)
        indices = draw_epoch_indices(weights, 100_000, seed=0, epoch=0)
        frac_first_class = np.mean(indices < 808)
        assert abs(frac_first_class - 0.5) <= 0.01


class TestPatchDataset:
    def test_groups_match_images(self, corpus):
        train_samples, _ = corpus
        ds = PatchDataset(train_samples, PREP, None)
        groups = ds.by_image()
        assert len(groups) == len(train_samples)
        assert sum(len(ids) for _, ids in groups) == len(ds)

    def test_disk_cache_roundtrip(self, corpus, tmp_path):
        train_samples, _ = corpus
        fresh = PatchDataset(train_samples[:4], PREP, None, cache_dir=tmp_path)
        cached = PatchDataset(train_samples[:4], PREP, None, cache_dir=tmp_path)
        assert len(fresh) == len(cached)
        np.testing.assert_array_equal(fresh.patch_pixels(0), cached.patch_pixels(0))

    def test_augmented_tensors_reproducible(self, corpus):
        train_samples, _ = corpus
        cfg = AugmentConfig(seed=3)
        a = PatchDataset(train_samples[:3], PREP, cfg)
        b = PatchDataset(train_samples[:3], PREP, cfg)
        for i in range(len(a)):
            assert torch.equal(a.training_tensor(i), b.training_tensor(i))


class TestTrain:
    def test_single_epoch_manifest(self, corpus, tmp_path):
        train_samples, val_samples = corpus
        cfg = TrainConfig(max_epochs=1, batch_size=8, seed=11)
        manifest = train(
            train_samples, val_samples, MODEL_CFG, cfg,
            prep=PREP, augment_cfg=None, out_dir=tmp_path, log_fn=quiet,
        )
        assert len(manifest.epochs) == 1
        assert manifest.best_epoch == 0
        assert (tmp_path / "model.pt").exists()
        reloaded = RunManifest.load(tmp_path / "manifest.json")
        assert reloaded.best_record().val_accuracy == manifest.epochs[0].val_accuracy
        assert 0.0 <= manifest.balanced_threshold <= 1.0

    def test_same_seed_reproduces_sampler_sequence(self, corpus, tmp_path):
        train_samples, val_samples = corpus
        cfg = TrainConfig(max_epochs=2, batch_size=8, seed=7)
        runs = []
        for name in ("a", "b"):
            manifest = train(
                train_samples, val_samples, MODEL_CFG, cfg,
                prep=PREP, augment_cfg=AugmentConfig(seed=7),
                out_dir=tmp_path / name, log_fn=quiet,
            )
            runs.append([e.sampler_digest for e in manifest.epochs])
        assert runs[0] == runs[1]

    def test_best_checkpoint_reproduces_manifest_metrics(self, corpus, tmp_path):
        train_samples, val_samples = corpus
        cfg = TrainConfig(max_epochs=2, batch_size=8, seed=3)
        manifest = train(
            train_samples, val_samples, MODEL_CFG, cfg,
            prep=PREP, augment_cfg=None, out_dir=tmp_path, log_fn=quiet,
        )
        model, _, extra = load_checkpoint(manifest.checkpoint)
        val_ds = PatchDataset(val_samples, PREP, None)
        _, _, report = evaluate_whole_images(model, val_ds, cfg.threshold)
        best = manifest.best_record()
        assert abs(report.macro_f1 - best.val_macro_f1) < 1e-6
        assert abs(report.accuracy - best.val_accuracy) < 1e-6
        assert extra["balanced_threshold"] == manifest.balanced_threshold

    def test_color_separable_smoke(self, tmp_path):
        root = tmp_path / "smoke"
        color_separable_corpus(root, n_per_class=30, seed=5)
        train_samples, val_samples = stratified_split(scan_corpus(root), 0.8, seed=1)
        cfg = TrainConfig(max_epochs=5, batch_size=16, seed=0, learning_rate=1e-3)
        manifest = train(
            train_samples, val_samples, MODEL_CFG, cfg,
            prep=PREP, augment_cfg=AugmentConfig(seed=0),
            out_dir=tmp_path / "run", log_fn=quiet,
        )
        assert manifest.best_record().val_accuracy >= 0.9

    def test_empty_sets_rejected(self, corpus, tmp_path):
        train_samples, val_samples = corpus
        with pytest.raises(ValueError):
            train([], val_samples, MODEL_CFG, TrainConfig(), out_dir=tmp_path, log_fn=quiet)
