"""End-to-end experiment orchestration.

``build_corpus`` synthesizes a labeled clean corpus, simulates one
impulse response per reverberation condition, and renders reverberant
copies for the train grid and the test sweep. ``run_training`` builds
the two model banks plus the pooled single-model baselines.
``run_evaluation`` sweeps the test conditions and fills the full
system x condition frame-error table. ``emit_report`` writes CSV/JSON
artifacts plus plot data.

Everything is driven by one ExperimentConfig and its single seed; a
rerun from the same config produces byte-identical artifacts.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .audio import AudioSignal, convolve, read_wav, write_wav
from .config import ExperimentConfig
from .ensemble import (
    ConditionData,
    classify_utterance,
    frame_error_rate,
    load_bank,
    save_bank,
    train_bank_eam,
    train_bank_ejam,
)
from .errors import DataError, UndecidableError
from .features import (
    NormStats,
    VARIANCE_FLOOR,
    append_deltas,
    frame_signal,
    logmel_filterbank,
    normalize,
    splice_indices,
)
from .matrixio import read_matrix, write_matrix
from .network import NetworkSpec, deserialize, init_network, predict, serialize, train
from .room import ImpulseResponse, RoomSpec, generate_rir, measure_rt60_schroeder
from .rt60 import estimate_utterance
from .synth import make_class_prototypes, synth_source

CORPUS_MANIFEST_VERSION = 1
MODELS_MANIFEST_VERSION = 1
REPORT_VERSION = 1


def derive_seed(*parts) -> int:
    """Stable child seed from integer parts (order matters)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Corpus synthesis


# Pause/gap source level relative to syllables (-80 dB). Quiet enough that
# reverberant tails decay freely, loud enough that clean-feature rows in
# pauses stay clear of the log floor.
PAUSE_GAIN = 1e-4


def make_utterance_plan(n_frames: int, num_classes: int, rng):
    """Per-frame labels and gains for one utterance.

    The layout mimics speech rhythm: syllable runs with random level and
    a fast release, short articulation gaps, occasional long pauses, and
    a final pause. Gap and pause frames keep the preceding syllable's
    label (their reverberant content is that syllable's decay tail).
    """
    labels = np.zeros(n_frames, dtype=np.int64)
    gains = np.full(n_frames, PAUSE_GAIN)
    end_pause = int(rng.integers(38, 49))
    body = max(n_frames - end_pause, min(n_frames, 8))
    pos = 0
    prev = -1
    while pos < body:
        klass = int(rng.integers(0, num_classes))
        if klass == prev:
            klass = (klass + 1) % num_classes
        run = int(min(rng.integers(4, 11), body - pos))
        level = rng.uniform(0.35, 1.0)
        shape = np.ones(run)
        shape[0] = 0.6
        if run >= 2:
            shape[-1] = 0.5
        labels[pos : pos + run] = klass
        gains[pos : pos + run] = level * shape
        prev = klass
        pos += run
        if pos >= body:
            break
        if rng.random() < 0.18:
            gap = int(rng.integers(32, 47))
        else:
            gap = int(rng.integers(0, 3))
        gap = min(gap, body - pos)
        labels[pos : pos + gap] = prev
        pos += gap
    labels[body:] = max(prev, 0)
    return labels, gains


@dataclass
class CorpusPaths:
    """Resolved locations of one corpus on disk."""

    root: Path

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def labels(self) -> Path:
        return self.root / "labels.json"

    @property
    def prototypes(self) -> Path:
        return self.root / "prototypes.ejmx"

    def rir(self, ms: int) -> Path:
        return self.root / "rirs" / f"rt{ms:04d}ms.ejmx"

    def clean_wav(self, split: str, index: int) -> Path:
        return self.root / "clean" / split / f"u{index:05d}.wav"

    def reverb_wav(self, split: str, ms: int, index: int) -> Path:
        return self.root / "reverb" / split / f"rt{ms:04d}" / f"u{index:05d}.wav"


def corpus_paths(cfg: ExperimentConfig) -> CorpusPaths:
    return CorpusPaths(Path(cfg.output_dir) / "corpus")


def _room_for(cfg: ExperimentConfig, rt60_s: float) -> RoomSpec:
    room = cfg.room
    return RoomSpec(
        dimensions_m=tuple(room.dimensions_m),
        source_pos_m=tuple(room.source_pos_m),
        mic_pos_m=tuple(room.mic_pos_m),
        target_rt60_s=rt60_s,
        max_rir_length_s=room.rir_length_factor * rt60_s,
        speed_of_sound_mps=room.speed_of_sound_mps,
    )


def build_corpus(cfg: ExperimentConfig) -> Path:
    """Synthesize and persist the full corpus; returns the manifest path.

    Splits use disjoint source utterances. Train and dev sources are
    rendered at every train-grid condition (members validate on their
    matched slice, pooled models on the mix); test sources are rendered
    at every sweep condition.
    """
    paths = corpus_paths(cfg)
    paths.root.mkdir(parents=True, exist_ok=True)
    frame_cfg = cfg.features.frame
    fs = cfg.corpus.sample_rate_hz
    n_samples = int(round(cfg.corpus.utterance_seconds * fs))
    n_frames = 1 + (n_samples - frame_cfg.frame_len(fs)) // frame_cfg.frame_shift(fs)

    n_bins = frame_cfg.fft_size(fs) // 2 + 1
    prototypes = make_class_prototypes(cfg.corpus.num_classes, n_bins, fs,
                                       seed=derive_seed(cfg.seed, 1))
    write_matrix(paths.prototypes, prototypes,
                 meta={"kind": "class_prototypes", "sample_rate_hz": fs})

    split_sizes = {
        "train": cfg.corpus.train_utterances_per_condition,
        "dev": cfg.corpus.dev_utterances,
        "test": cfg.corpus.test_utterances_per_point,
    }
    all_labels = {}
    for split_tag, (split, count) in enumerate(split_sizes.items()):
        split_labels = []
        for index in range(count):
            plan_rng = np.random.default_rng([cfg.seed, 2, split_tag, index])
            labels, gains = make_utterance_plan(n_frames, cfg.corpus.num_classes, plan_rng)
            utt = synth_source(
                labels, prototypes, frame_cfg,
                seed=derive_seed(cfg.seed, 3, split_tag, index),
                sample_rate_hz=fs, frame_gains=gains,
            )
            path = paths.clean_wav(split, index)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav(path, utt.audio)
            split_labels.append(utt.frame_labels.tolist())
        all_labels[split] = split_labels
    paths.labels.write_text(json.dumps(all_labels) + "\n")

    grid_ms = cfg.grid_ms()
    sweep_ms = cfg.test_sweep.points_ms()
    rir_info = {}
    rirs = {}
    for ms in sorted(set(grid_ms) | set(sweep_ms)):
        room = _room_for(cfg, ms / 1000.0)
        rir = generate_rir(room, fs, seed=derive_seed(cfg.seed, 4, ms))
        measured = measure_rt60_schroeder(rir)
        path = paths.rir(ms)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_matrix(path, rir.taps[None, :], meta={
            "kind": "rir", "sample_rate_hz": fs,
            "target_rt60_s": ms / 1000.0, "schroeder_rt60_s": measured,
        })
        rir_info[str(ms)] = {"target_rt60_s": ms / 1000.0, "schroeder_rt60_s": measured}
        rirs[ms] = rir

    for split, conditions in (("train", grid_ms), ("dev", grid_ms), ("test", sweep_ms)):
        for ms in conditions:
            rir = rirs[ms]
            for index in range(split_sizes[split]):
                clean = read_wav(paths.clean_wav(split, index))
                wet = convolve(clean, rir)
                path = paths.reverb_wav(split, ms, index)
                path.parent.mkdir(parents=True, exist_ok=True)
                write_wav(path, wet)

    manifest = {
        "format_version": CORPUS_MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "num_frames_per_utterance": n_frames,
        "split_sizes": split_sizes,
        "train_grid_ms": list(grid_ms),
        "sweep_ms": list(sweep_ms),
        "rirs": rir_info,
    }
    paths.manifest.write_text(json.dumps(manifest, indent=2) + "\n")
    return paths.manifest


def load_rir(paths: CorpusPaths, ms: int, room: Optional[RoomSpec] = None) -> ImpulseResponse:
    taps, meta = read_matrix(paths.rir(ms))
    return ImpulseResponse(taps[0], int(meta["sample_rate_hz"]), meta=room)


# ---------------------------------------------------------------------------
# Feature assembly for training


class SplicedBatches:
    """Training provider that splices context windows on demand.

    Holds compact per-frame features (T_total x D) plus per-utterance
    boundaries; a batch gathers rows ``[n - tau .. n + tau]`` (clipped at
    utterance edges) into ``D * (2 tau + 1)``-dim vectors. ``targets``
    are integer labels, or a second feature matrix spliced the same way
    (clean mapping targets), selected by ``target_kind``.
    """

    def __init__(self, flat, utt_lengths, targets, context_radius,
                 target_kind="labels", loss_mask=None):
        self.flat = np.asarray(flat, dtype=np.float64)
        self.tau = int(context_radius)
        self.target_kind = target_kind
        self.loss_mask = loss_mask
        if target_kind == "labels":
            self.targets = np.asarray(targets, dtype=np.int64)
            if self.targets.shape[0] != self.flat.shape[0]:
                raise DataError("labels misaligned with feature rows")
        elif target_kind == "features":
            self.targets = np.asarray(targets, dtype=np.float64)
            if self.targets.shape != self.flat.shape:
                raise DataError("mapping targets misaligned with inputs")
        else:
            raise ValueError(f"unknown target kind {target_kind!r}")
        if sum(utt_lengths) != self.flat.shape[0]:
            raise DataError("utterance lengths do not cover the feature matrix")
        chunks = []
        offset = 0
        for length in utt_lengths:
            chunks.append(offset + splice_indices(length, self.tau))
            offset += length
        self.indices = np.concatenate(chunks).astype(np.int64)

    def __len__(self):
        return self.flat.shape[0]

    @property
    def dim(self) -> int:
        return self.flat.shape[1] * (2 * self.tau + 1)

    def gather(self, rows) -> np.ndarray:
        idx = self.indices[rows]
        return self.flat[idx].reshape(len(rows), self.dim)

    def batch(self, rows):
        x = self.gather(rows)
        if self.target_kind == "labels":
            return x, self.targets[rows]
        idx = self.indices[rows]
        return x, self.targets[idx].reshape(len(rows), self.dim)

    def materialize(self) -> np.ndarray:
        return self.gather(np.arange(len(self)))

    def materialize_targets(self) -> np.ndarray:
        return self.batch(np.arange(len(self)))[1]


def utterance_features(signal: AudioSignal, frame_cfg, stats: Optional[NormStats],
                       do_normalize: bool) -> np.ndarray:
    """Compact (base + deltas) features, normalized if requested."""
    seq = append_deltas(
        logmel_filterbank(frame_signal(signal, frame_cfg), frame_cfg, signal.sample_rate_hz),
        frame_cfg,
    )
    if do_normalize:
        if stats is None:
            raise DataError("normalization requested but no stats given")
        seq, _ = normalize(seq, stats)
    return seq.frames


class _StatsAccumulator:
    """Streaming per-dimension mean/variance."""

    def __init__(self):
        self.count = 0
        self.total = None
        self.total_sq = None

    def add(self, frames):
        if self.total is None:
            self.total = frames.sum(axis=0)
            self.total_sq = (frames * frames).sum(axis=0)
        else:
            self.total += frames.sum(axis=0)
            self.total_sq += (frames * frames).sum(axis=0)
        self.count += frames.shape[0]

    def stats(self) -> NormStats:
        if not self.count:
            raise DataError("no frames accumulated for normalization stats")
        mean = self.total / self.count
        var = np.maximum(self.total_sq / self.count - mean * mean, VARIANCE_FLOOR)
        return NormStats(mean=mean, var=var)


# ---------------------------------------------------------------------------
# Training


@dataclass
class ModelsPaths:
    root: Path

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def stats(self) -> Path:
        return self.root / "norm_stats.ejmx"

    @property
    def histories(self) -> Path:
        return self.root / "histories.json"

    def bank_dir(self, kind: str) -> Path:
        return self.root / kind

    def baseline(self, name: str) -> Path:
        return self.root / f"{name.lower()}.ejam"


def models_paths(cfg: ExperimentConfig) -> ModelsPaths:
    return ModelsPaths(Path(cfg.output_dir) / "models")


def _load_corpus_manifest(paths: CorpusPaths) -> dict:
    if not paths.manifest.exists():
        raise DataError(f"corpus manifest not found at {paths.manifest}; run synth-corpus first")
    return json.loads(paths.manifest.read_text())


def _history_to_dict(hist) -> dict:
    if isinstance(hist, dict):
        return {str(key): _history_to_dict(value) for key, value in hist.items()}
    return hist.to_dict()


def run_training(cfg: ExperimentConfig, only: Optional[List[str]] = None) -> Path:
    """Train banks and baselines from a built corpus; returns manifest path.

    ``only`` restricts the run to a subset of {"eam", "ejam", "sbm",
    "esbm"}; the models manifest reflects everything trained so far.
    """
    wanted = {w.lower() for w in (only or ("eam", "ejam", "sbm", "esbm"))}
    unknown = wanted - {"eam", "ejam", "sbm", "esbm"}
    if unknown:
        raise DataError(f"unknown training targets: {sorted(unknown)}")

    paths = corpus_paths(cfg)
    manifest = _load_corpus_manifest(paths)
    labels_by_split = json.loads(paths.labels.read_text())
    frame_cfg = cfg.features.frame
    grid_ms = manifest["train_grid_ms"]
    n_train = manifest["split_sizes"]["train"]
    n_dev = manifest["split_sizes"]["dev"]
    k = cfg.corpus.num_classes
    tau = frame_cfg.context_radius

    mpaths = models_paths(cfg)
    mpaths.root.mkdir(parents=True, exist_ok=True)

    # Shared normalization stats from the pooled reverberant training data.
    stats = None
    if cfg.features.normalize:
        acc = _StatsAccumulator()
        for ms in grid_ms:
            for index in range(n_train):
                signal = read_wav(paths.reverb_wav("train", ms, index))
                acc.add(utterance_features(signal, frame_cfg, None, False))
        stats = acc.stats()
        stats.save(mpaths.stats)

    def split_features(split, ms, count):
        flats, lengths = [], []
        for index in range(count):
            signal = read_wav(paths.reverb_wav(split, ms, index))
            frames = utterance_features(signal, frame_cfg, stats, cfg.features.normalize)
            flats.append(frames)
            lengths.append(frames.shape[0])
        return np.concatenate(flats), lengths

    def clean_features(split, count):
        flats, lengths = [], []
        for index in range(count):
            signal = read_wav(paths.clean_wav(split, index))
            frames = utterance_features(signal, frame_cfg, stats, cfg.features.normalize)
            flats.append(frames)
            lengths.append(frames.shape[0])
        return np.concatenate(flats), lengths

    def labels_for(split, count):
        rows = labels_by_split[split][:count]
        return np.concatenate([np.asarray(r, dtype=np.int64) for r in rows])

    train_labels = labels_for("train", n_train)
    dev_labels = labels_for("dev", n_dev)
    need_clean = "ejam" in wanted
    clean_train_flat = clean_dev_flat = None
    if need_clean:
        clean_train_flat, _ = clean_features("train", n_train)
        clean_dev_flat, _ = clean_features("dev", n_dev)

    conditions = []
    for ms in grid_ms:
        reverb_train, lengths = split_features("train", ms, n_train)
        reverb_dev, dlengths = split_features("dev", ms, n_dev)
        am_provider = SplicedBatches(reverb_train, lengths, train_labels, tau)
        dev_provider = SplicedBatches(reverb_dev, dlengths, dev_labels, tau)
        cond = {
            "ms": ms,
            "am": am_provider,
            "lengths": lengths,
            "dev_lengths": dlengths,
            "dev_inputs": dev_provider.materialize(),
            "dev_labels": dev_labels,
            "fm": None,
            "dev_clean": None,
        }
        if need_clean:
            cond["fm"] = SplicedBatches(reverb_train, lengths, clean_train_flat, tau,
                                        target_kind="features")
            cond["dev_clean"] = SplicedBatches(
                reverb_dev, dlengths, clean_dev_flat, tau, target_kind="features"
            ).materialize_targets()
        conditions.append(cond)

    histories = {}
    trained = {}
    if mpaths.histories.exists():
        histories = json.loads(mpaths.histories.read_text())
    if mpaths.manifest.exists():
        trained = json.loads(mpaths.manifest.read_text()).get("artifacts", {})

    nets_cfg = cfg.networks
    stats_arg = mpaths.stats if stats is not None else None
    if "eam" in wanted:
        cond_data = [
            ConditionData(
                rt60_s=c["ms"] / 1000.0,
                train_am=c["am"],
                dev_inputs=c["dev_inputs"],
                dev_labels=c["dev_labels"],
            )
            for c in conditions
        ]
        bank, hist = train_bank_eam(
            cond_data, nets_cfg.member_hidden, cfg.training.am,
            seed=cfg.seed, hidden_activation=nets_cfg.hidden_activation,
            num_classes=k, stats=stats,
        )
        save_bank(bank, mpaths.bank_dir("eam"), stats_path=stats_arg)
        trained["eam"] = "eam/manifest.json"
        histories["eam"] = _history_to_dict(hist)

    if "ejam" in wanted:
        cond_data = [
            ConditionData(
                rt60_s=c["ms"] / 1000.0,
                train_am=c["am"],
                dev_inputs=c["dev_inputs"],
                dev_labels=c["dev_labels"],
                train_fm=c["fm"],
                dev_clean_targets=c["dev_clean"],
            )
            for c in conditions
        ]
        bank, hist = train_bank_ejam(
            cond_data, nets_cfg.fm_hidden, nets_cfg.member_hidden,
            cfg.training.fm, cfg.training.am, cfg.training.joint,
            seed=cfg.seed, fm_l2_weight=nets_cfg.fm_l2_weight,
            hidden_activation=nets_cfg.hidden_activation, num_classes=k, stats=stats,
            center_frame_only=nets_cfg.fm_center_frame_only,
            center_dim=3 * frame_cfg.num_bands,
        )
        save_bank(bank, mpaths.bank_dir("ejam"), stats_path=stats_arg)
        trained["ejam"] = "ejam/manifest.json"
        histories["ejam"] = _history_to_dict(hist)

    if wanted & {"sbm", "esbm"}:
        pooled_flat = np.concatenate([c["am"].flat for c in conditions])
        pooled_lengths = [length for c in conditions for length in c["lengths"]]
        pooled_labels = np.concatenate([train_labels] * len(conditions))
        pooled = SplicedBatches(pooled_flat, pooled_lengths, pooled_labels, tau)
        pooled_dev_flat = np.concatenate(
            [split_features("dev", ms, n_dev)[0] for ms in grid_ms]
        )
        pooled_dev_lengths = [length for c in conditions for length in c["dev_lengths"]]
        pooled_dev = SplicedBatches(
            pooled_dev_flat, pooled_dev_lengths,
            np.concatenate([dev_labels] * len(grid_ms)), tau,
        )
        for name, hidden in (("sbm", nets_cfg.sbm_hidden), ("esbm", nets_cfg.esbm_hidden)):
            if name not in wanted:
                continue
            spec = NetworkSpec(
                layer_dims=(pooled.dim, *hidden, k),
                hidden_activation=nets_cfg.hidden_activation,
                output_head="softmax",
                seed=derive_seed(cfg.seed, 5, len(hidden)),
            )
            net = init_network(spec)
            rng = np.random.default_rng([cfg.seed, 5, len(hidden)])
            hist = train(net, pooled, pooled_dev, cfg.training.baseline, rng)
            serialize(net, mpaths.baseline(name))
            trained[name] = mpaths.baseline(name).name
            histories[name] = hist.to_dict()

    models_manifest = {
        "format_version": MODELS_MANIFEST_VERSION,
        "config": cfg.to_dict(),
        "artifacts": trained,
        "norm_stats": mpaths.stats.name if stats is not None else None,
        "checksums": {
            name: zlib.crc32((mpaths.root / rel).read_bytes())
            for name, rel in sorted(trained.items())
        },
    }
    mpaths.manifest.write_text(json.dumps(models_manifest, indent=2) + "\n")
    mpaths.histories.write_text(json.dumps(histories, indent=2) + "\n")
    return mpaths.manifest


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    """Frame-error table (systems x conditions) plus diagnostics."""

    systems: List[str]
    conditions_ms: List[int]
    table: Dict[str, Dict[str, float]]  # system -> {str(ms): FER %}
    diagnostics: List[dict]
    likelihood_examples: List[dict]
    config: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "systems": self.systems,
            "conditions_ms": self.conditions_ms,
            "table": self.table,
            "diagnostics": self.diagnostics,
            "likelihood_examples": self.likelihood_examples,
            "config": self.config,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls(
            systems=list(raw["systems"]),
            conditions_ms=list(raw["conditions_ms"]),
            table=raw["table"],
            diagnostics=list(raw["diagnostics"]),
            likelihood_examples=list(raw["likelihood_examples"]),
            config=raw["config"],
            seed=raw["seed"],
        )


def system_names(grid_rt60_s) -> List[str]:
    names = ["SBM", "eSBM"]
    names += [f"EAM-single({g:g})" for g in grid_rt60_s]
    names += ["EAM-top2"]
    names += [f"EJAM-single({g:g})" for g in grid_rt60_s]
    names += ["EJAM-top2"]
    return names


def run_evaluation(cfg: ExperimentConfig, models_dir=None) -> EvalReport:
    """Evaluate every configured system at every sweep condition."""
    paths = corpus_paths(cfg)
    manifest = _load_corpus_manifest(paths)
    mpaths = ModelsPaths(Path(models_dir)) if models_dir else models_paths(cfg)
    if not mpaths.manifest.exists():
        raise DataError(f"models manifest not found at {mpaths.manifest}; run train first")
    models_manifest = json.loads(mpaths.manifest.read_text())
    artifacts = models_manifest.get("artifacts", {})
    for required in ("eam", "ejam", "sbm", "esbm"):
        if required not in artifacts:
            raise DataError(f"missing trained model {required!r}; train it before evaluating")

    eam = load_bank(mpaths.root / artifacts["eam"])
    ejam = load_bank(mpaths.root / artifacts["ejam"])
    sbm = deserialize(mpaths.root / artifacts["sbm"])
    esbm = deserialize(mpaths.root / artifacts["esbm"])
    stats = None
    if models_manifest.get("norm_stats"):
        stats = NormStats.load(mpaths.root / models_manifest["norm_stats"])

    for bank in (eam, ejam):
        if bank.num_classes != cfg.corpus.num_classes:
            raise DataError("bank output size does not match the corpus class count")

    frame_cfg = cfg.features.frame
    tau = frame_cfg.context_radius
    grid = eam.grid_rt60_s
    labels_by_split = json.loads(paths.labels.read_text())
    n_test = manifest["split_sizes"]["test"]
    sweep_ms = manifest["sweep_ms"]

    systems = system_names(grid)
    errors = {name: {str(ms): [0, 0] for ms in sweep_ms} for name in systems}
    diagnostics = []
    likelihood_examples = []

    for ms in sweep_ms:
        for index in range(n_test):
            audio = read_wav(paths.reverb_wav("test", ms, index))
            flat = utterance_features(audio, frame_cfg, stats, cfg.features.normalize)
            x = flat[splice_indices(flat.shape[0], tau)].reshape(flat.shape[0], -1)
            labels = np.asarray(labels_by_split["test"][index], dtype=np.int64)

            try:
                estimate = estimate_utterance(audio, cfg.rt60_estimator)
            except (UndecidableError, ValueError):
                estimate = None

            def tally(name, predictions):
                cell = errors[name][str(ms)]
                cell[0] += int(np.sum(predictions != labels))
                cell[1] += labels.size

            tally("SBM", predict(sbm, x).argmax(axis=1))
            tally("eSBM", predict(esbm, x).argmax(axis=1))

            utt_diag = {"condition_ms": ms, "index": index}
            for bank, tag in ((eam, "EAM"), (ejam, "EJAM")):
                for g_index, g in enumerate(grid):
                    preds, _ = classify_utterance(bank, x, mode="single", member=g_index)
                    tally(f"{tag}-single({g:g})", preds)
                preds, diag = classify_utterance(
                    bank, x, mode="top2", audio=audio, estimate=estimate,
                    estimator_cfg=cfg.rt60_estimator, weight_mode=cfg.weight_mode,
                )
                tally(f"{tag}-top2", preds)
                utt_diag[tag.lower()] = diag.to_dict()
            diagnostics.append(utt_diag)

            if index == 0 and estimate is not None:
                curve = estimate.aggregated_curve
                likelihood_examples.append({
                    "condition_ms": ms,
                    "index": index,
                    "grid_rt60_s": curve.rt60_s.tolist(),
                    "mean_loglik": curve.loglik.tolist(),
                })

    table = {
        name: {
            key: 100.0 * wrong / max(total, 1)
            for key, (wrong, total) in errors[name].items()
        }
        for name in systems
    }
    return EvalReport(
        systems=systems,
        conditions_ms=list(sweep_ms),
        table=table,
        diagnostics=diagnostics,
        likelihood_examples=likelihood_examples,
        config=cfg.to_dict(),
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Reporting


def report_paths(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / "report"


def emit_report(report: EvalReport, outdir, formats=("csv", "json")) -> List[Path]:
    """Write the report artifacts; returns the created file paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    if "json" in formats:
        path = outdir / "report.json"
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        written.append(path)

    if "csv" in formats:
        path = outdir / "results.csv"
        header = "rt60_s," + ",".join(report.systems)
        lines = [header]
        for ms in report.conditions_ms:
            cells = [f"{ms / 1000.0:.2f}"]
            cells += [f"{report.table[name][str(ms)]:.6f}" for name in report.systems]
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        plots = outdir / "plots"
        plots.mkdir(exist_ok=True)
        sweep = plots / "sweep_frame_error.csv"
        sweep.write_text("\n".join(lines) + "\n")
        written.append(sweep)
        for example in report.likelihood_examples:
            name = plots / f"likelihood_rt{example['condition_ms']:04d}_u{example['index']:05d}.csv"
            rows = ["rt60_s,mean_loglik"]
            rows += [
                f"{rt:.6f},{ll:.9e}"
                for rt, ll in zip(example["grid_rt60_s"], example["mean_loglik"])
            ]
            name.write_text("\n".join(rows) + "\n")
            written.append(name)

    return written


def load_report(path) -> EvalReport:
    raw = json.loads(Path(path).read_text())
    if raw.get("format_version") != REPORT_VERSION:
        raise DataError(f"{path}: unsupported report version")
    return EvalReport.from_dict(raw)
