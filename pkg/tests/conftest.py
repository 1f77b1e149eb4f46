"""Shared fixtures: experiment runs reused across test modules."""

import hashlib
import json
import time
from pathlib import Path

import pytest

from ejam.config import (
    CorpusConfig,
    ExperimentConfig,
    NetworksConfig,
    SweepConfig,
    TrainingConfig,
)
from ejam.network import TrainConfig
from ejam.pipeline import (
    build_corpus,
    emit_report,
    report_paths,
    run_evaluation,
    run_training,
)


def tree_hashes(root: Path) -> dict:
    """sha256 of every file under root, keyed by relative path."""
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def run_full_pipeline(cfg: ExperimentConfig):
    build_corpus(cfg)
    run_training(cfg)
    report = run_evaluation(cfg)
    emit_report(report, report_paths(cfg))
    return report


def tiny_config(output_dir: str) -> ExperimentConfig:
    """A complete but minutes-fast experiment configuration."""
    return ExperimentConfig(
        seed=1234,
        output_dir=output_dir,
        corpus=CorpusConfig(
            train_utterances_per_condition=6,
            dev_utterances=3,
            test_utterances_per_point=2,
            utterance_seconds=1.0,
        ),
        train_grid_rt60_s=(0.3, 0.6, 0.9),
        test_sweep=SweepConfig(0.3, 0.9, 0.3),
        networks=NetworksConfig(
            member_hidden=(32, 32),
            fm_hidden=(32,),
            sbm_hidden=(32, 32),
            esbm_hidden=(48, 48),
        ),
        training=TrainingConfig(
            am=TrainConfig(learning_rate=0.1, epochs=3, minibatch_size=256, patience=3),
            fm=TrainConfig(learning_rate=0.004, epochs=2, minibatch_size=256, patience=2),
            joint=TrainConfig(learning_rate=0.02, epochs=2, minibatch_size=256, patience=2),
            baseline=TrainConfig(learning_rate=0.1, epochs=3, minibatch_size=256, patience=3),
        ),
    )


def acceptance_config(output_dir: str) -> ExperimentConfig:
    """The seeded desk-scale experiment used by the acceptance criteria."""
    return ExperimentConfig(
        seed=20260811,
        output_dir=output_dir,
        corpus=CorpusConfig(
            train_utterances_per_condition=120,
            dev_utterances=21,
            test_utterances_per_point=10,
            utterance_seconds=2.0,
        ),
        test_sweep=SweepConfig(0.3, 0.9, 0.05),
    )


@pytest.fixture(scope="session")
def tiny_experiment(tmp_path_factory):
    """One full tiny pipeline run; returns (config, report, output hashes)."""
    outdir = tmp_path_factory.mktemp("tiny") / "exp"
    cfg = tiny_config(str(outdir))
    report = run_full_pipeline(cfg)
    hashes = tree_hashes(outdir)
    return cfg, report, hashes


@pytest.fixture(scope="session")
def acceptance_experiment(tmp_path_factory):
    """The seeded desk-scale experiment; returns (config, report, seconds)."""
    outdir = tmp_path_factory.mktemp("acceptance") / "exp"
    cfg = acceptance_config(str(outdir))
    started = time.monotonic()
    report = run_full_pipeline(cfg)
    elapsed = time.monotonic() - started
    return cfg, report, elapsed
