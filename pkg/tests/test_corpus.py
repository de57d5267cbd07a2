"""Corpus scanning, stratified split, and sampler weight tests."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from glandscreen.corpus import (
    CorpusSummary,
    LabeledSample,
    class_balance_weights,
    read_split_file,
    sampler_weights,
    scan_corpus,
    stratified_split,
    write_split_file,
)
from glandscreen.errors import EmptyClass


def make_corpus(root: Path, n_normal: int, n_abnormal: int) -> None:
    for label, count in (("normal", n_normal), ("abnormal", n_abnormal)):
        d = root / label
        d.mkdir(parents=True)
        for i in range(count):
            Image.new("RGB", (8, 8), (200, 100, 150)).save(d / f"img_{i:03d}.png")


class TestScanCorpus:
    def test_counts_and_order(self, tmp_path):
        make_corpus(tmp_path, 3, 5)
        samples = scan_corpus(tmp_path)
        assert len(samples) == 8
        assert [str(s.path) for s in samples] == sorted(str(s.path) for s in samples)
        summary = CorpusSummary.of(samples)
        assert summary.total == 8
        assert summary.counts["unassigned"] == {"normal": 3, "abnormal": 5}

    def test_empty_class_raises(self, tmp_path):
        make_corpus(tmp_path, 2, 2)
        for f in (tmp_path / "normal").iterdir():
            f.unlink()
        with pytest.raises(EmptyClass):
            scan_corpus(tmp_path)

    def test_undecodable_files_skipped(self, tmp_path, caplog):
        make_corpus(tmp_path, 2, 2)
        (tmp_path / "normal" / "broken.png").write_bytes(b"not an image")
        with caplog.at_level("WARNING"):
            samples = scan_corpus(tmp_path)
        assert len(samples) == 4
        assert "broken.png" in caplog.text


class TestStratifiedSplit:
    def _samples(self, n_normal, n_abnormal):
        return [
            LabeledSample(Path(f"n_{i}.png"), "normal") for i in range(n_normal)
        ] + [LabeledSample(Path(f"a_{i}.png"), "abnormal") for i in range(n_abnormal)]

    def test_reference_corpus_class_counts(self):
        train, val = stratified_split(self._samples(1010, 1230), 0.8, seed=1)
        t_counts = {l: sum(s.label == l for s in train) for l in ("normal", "abnormal")}
        v_counts = {l: sum(s.label == l for s in val) for l in ("normal", "abnormal")}
        assert t_counts == {"normal": 808, "abnormal": 984}
        assert v_counts == {"normal": 202, "abnormal": 246}

    def test_small_exact_split(self):
        train, val = stratified_split(self._samples(10, 10), 0.8, seed=0)
        assert sum(s.label == "normal" for s in train) == 8
        assert sum(s.label == "abnormal" for s in train) == 8
        assert len(val) == 4

    def test_deterministic_given_seed(self):
        samples = self._samples(23, 31)
        a = stratified_split(samples, 0.8, seed=9)
        b = stratified_split(samples, 0.8, seed=9)
        assert [s.path for s in a[0]] == [s.path for s in b[0]]
        assert [s.path for s in a[1]] == [s.path for s in b[1]]

    def test_partition_property(self):
        samples = self._samples(17, 29)
        train, val = stratified_split(samples, 0.7, seed=3)
        all_paths = {s.path for s in samples}
        train_paths = {s.path for s in train}
        val_paths = {s.path for s in val}
        assert train_paths | val_paths == all_paths
        assert not train_paths & val_paths

    def test_single_class_rejected(self):
        only = [LabeledSample(Path(f"n_{i}.png"), "normal") for i in range(5)]
        with pytest.raises(ValueError):
            stratified_split(only, 0.8)

    def test_split_file_roundtrip(self, tmp_path):
        train, val = stratified_split(self._samples(6, 8), 0.5, seed=4)
        path = tmp_path / "split.json"
        write_split_file(path, train, val, seed=4)
        train2, val2 = read_split_file(path)
        assert [s.path for s in train2] == [s.path for s in train]
        assert [(s.label, s.split) for s in val2] == [(s.label, s.split) for s in val]


class TestSamplerWeights:
    def test_inverse_count_ratio(self):
        labels = ["normal"] * 808 + ["abnormal"] * 984
        weights = class_balance_weights(labels)
        ratio = weights[0] / weights[-1]
        np.testing.assert_allclose(ratio, 984 / 808)

    def test_equal_counts_equal_weights(self):
        weights = class_balance_weights(["normal"] * 5 + ["abnormal"] * 5)
        assert np.all(weights == weights[0])

    def test_simulated_draws_balance_classes(self):
        labels = ["normal"] * 808 + ["abnormal"] * 984
        weights = class_balance_weights(labels)
        rng = np.random.default_rng(0)
        draws = rng.choice(len(labels), size=100_000, p=weights / weights.sum())
        frac_normal = np.mean(draws < 808)
        assert abs(frac_normal - 0.5) <= 0.01

    def test_accepts_samples(self):
        samples = [LabeledSample(Path("a"), "abnormal"), LabeledSample(Path("b"), "normal")]
        np.testing.assert_allclose(sampler_weights(samples), [1.0, 1.0])
