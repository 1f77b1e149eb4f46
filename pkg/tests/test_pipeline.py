import json

import numpy as np
import pytest

from ejam.audio import read_wav
from ejam.features import FrameConfig
from ejam.pipeline import (
    CorpusPaths,
    SplicedBatches,
    corpus_paths,
    load_rir,
    make_utterance_plan,
    models_paths,
    report_paths,
    run_evaluation,
)
from ejam.room import measure_rt60_schroeder
from ejam.errors import DataError


class TestUtterancePlan:
    def test_shapes_and_ranges(self):
        rng = np.random.default_rng(0)
        labels, gains = make_utterance_plan(198, 8, rng)
        assert labels.shape == gains.shape == (198,)
        assert labels.min() >= 0 and labels.max() < 8
        assert gains.min() >= 0.0 and gains.max() <= 1.0

    def test_contains_syllables_and_pauses(self):
        rng = np.random.default_rng(1)
        labels, gains = make_utterance_plan(198, 8, rng)
        assert np.sum(gains > 0.3) > 40  # voiced content
        assert np.sum(gains < 1e-3) > 30  # pauses
        # the final stretch is a pause
        assert np.all(gains[-30:] < 1e-3)

    def test_deterministic_given_rng_state(self):
        a = make_utterance_plan(100, 8, np.random.default_rng(7))
        b = make_utterance_plan(100, 8, np.random.default_rng(7))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestSplicedBatches:
    def test_matches_materialized_splice(self):
        rng = np.random.default_rng(2)
        flat = rng.standard_normal((25, 4))
        lengths = [10, 15]
        labels = rng.integers(0, 3, 25)
        provider = SplicedBatches(flat, lengths, labels, context_radius=2)
        assert provider.dim == 20
        x, y = provider.batch(np.arange(25))
        from ejam.features import FeatureSequence, splice

        per_utt = []
        for start, length in ((0, 10), (10, 15)):
            seq = FeatureSequence(flat[start : start + length], "with_deltas")
            per_utt.append(splice(seq, 2).frames)
        expected = np.vstack(per_utt)
        assert np.array_equal(x, expected)
        assert np.array_equal(y, labels)

    def test_feature_targets_spliced_identically(self):
        rng = np.random.default_rng(3)
        flat = rng.standard_normal((12, 3))
        clean = rng.standard_normal((12, 3))
        provider = SplicedBatches(flat, [12], clean, 1, target_kind="features")
        x, y = provider.batch(np.array([0, 5, 11]))
        assert x.shape == y.shape == (3, 9)

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            SplicedBatches(np.zeros((10, 3)), [4, 4], np.zeros(10), 1)

    def test_misaligned_targets_rejected(self):
        with pytest.raises(DataError):
            SplicedBatches(np.zeros((10, 3)), [10], np.zeros((9, 3)), 1,
                           target_kind="features")


class TestCorpusArtifacts:
    def test_manifest_and_splits(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        paths = corpus_paths(cfg)
        manifest = json.loads(paths.manifest.read_text())
        assert manifest["split_sizes"] == {"train": 6, "dev": 3, "test": 2}
        assert manifest["train_grid_ms"] == [300, 600, 900]
        assert manifest["sweep_ms"] == [300, 600, 900]

    def test_split_sources_disjoint(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        paths = corpus_paths(cfg)
        blobs = {
            split: paths.clean_wav(split, 0).read_bytes()
            for split in ("train", "dev", "test")
        }
        assert blobs["train"] != blobs["dev"]
        assert blobs["train"] != blobs["test"]
        assert blobs["dev"] != blobs["test"]

    def test_stored_rirs_hit_nominal_decay(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        paths = corpus_paths(cfg)
        manifest = json.loads(paths.manifest.read_text())
        for ms, info in manifest["rirs"].items():
            measured = info["schroeder_rt60_s"]
            nominal = info["target_rt60_s"]
            assert abs(measured - nominal) / nominal <= 0.20
            rir = load_rir(paths, int(ms))
            remeasured = measure_rt60_schroeder(rir)
            assert remeasured == pytest.approx(measured, rel=1e-9)

    def test_labels_align_with_rendered_audio(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        paths = corpus_paths(cfg)
        labels = json.loads(paths.labels.read_text())
        frame_cfg = cfg.features.frame
        wav = read_wav(paths.reverb_wav("train", 300, 0))
        from ejam.features import num_frames

        assert len(labels["train"][0]) == num_frames(
            wav.samples.size, frame_cfg, wav.sample_rate_hz
        )


class TestTrainingArtifacts:
    def test_manifest_checksums_valid(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        mpaths = models_paths(cfg)
        manifest = json.loads(mpaths.manifest.read_text())
        assert set(manifest["artifacts"]) == {"eam", "ejam", "sbm", "esbm"}
        import zlib

        for name, rel in manifest["artifacts"].items():
            blob = (mpaths.root / rel).read_bytes()
            assert zlib.crc32(blob) == manifest["checksums"][name], name

    def test_dev_loss_improves_for_every_model(self, tiny_experiment):
        cfg, _, _ = tiny_experiment
        histories = json.loads(models_paths(cfg).histories.read_text())
        for name in ("sbm", "esbm"):
            losses = histories[name]["dev_loss"]
            assert min(losses) < losses[0], name
        for key, hist in histories["eam"].items():
            assert min(hist["dev_loss"]) < hist["dev_loss"][0], key
        for key, stages in histories["ejam"].items():
            assert min(stages["fm"]["dev_loss"]) < stages["fm"]["dev_loss"][0], key


class TestReport:
    def test_every_cell_present_and_bounded(self, tiny_experiment):
        _, report, _ = tiny_experiment
        assert len(report.systems) == 2 + 2 * (3 + 1)
        for name in report.systems:
            for ms in report.conditions_ms:
                value = report.table[name][str(ms)]
                assert 0.0 <= value <= 100.0

    def test_csv_round_trip(self, tiny_experiment):
        cfg, report, _ = tiny_experiment
        csv_path = report_paths(cfg) / "results.csv"
        lines = csv_path.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[0] == "rt60_s"
        assert header[1:] == report.systems
        assert len(lines) == 1 + len(report.conditions_ms)
        for line, ms in zip(lines[1:], report.conditions_ms):
            cells = line.split(",")
            assert float(cells[0]) == ms / 1000.0
            for name, cell in zip(report.systems, cells[1:]):
                assert float(cell) == pytest.approx(report.table[name][str(ms)], abs=1e-6)

    def test_config_snapshot_embedded(self, tiny_experiment):
        cfg, report, _ = tiny_experiment
        assert report.config == json.loads(json.dumps(cfg.to_dict()))
        assert report.seed == cfg.seed

    def test_diagnostics_weights_consistent(self, tiny_experiment):
        _, report, _ = tiny_experiment
        for diag in report.diagnostics:
            for tag in ("eam", "ejam"):
                entry = diag[tag]
                if "w_m1" in entry:
                    assert entry["w_m1"] + entry["w_m2"] == pytest.approx(1.0, abs=1e-9)
                    assert entry["m1"] != entry["m2"]

    def test_report_json_loadable(self, tiny_experiment):
        cfg, report, _ = tiny_experiment
        from ejam.pipeline import load_report

        loaded = load_report(report_paths(cfg) / "report.json")
        assert loaded.table == report.table
        assert loaded.systems == report.systems

    def test_evaluation_requires_all_models(self, tiny_experiment, tmp_path):
        cfg, _, _ = tiny_experiment
        mpaths = models_paths(cfg)
        manifest = json.loads(mpaths.manifest.read_text())
        broken = dict(manifest)
        broken["artifacts"] = {k: v for k, v in manifest["artifacts"].items() if k != "sbm"}
        broken_dir = tmp_path / "models"
        broken_dir.mkdir()
        (broken_dir / "manifest.json").write_text(json.dumps(broken))
        with pytest.raises(DataError, match="sbm"):
            run_evaluation(cfg, models_dir=broken_dir)
