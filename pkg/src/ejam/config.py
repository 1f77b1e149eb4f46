"""Experiment configuration: one JSON file drives corpus synthesis,
training, and evaluation.

Every knob has a desk-scale default sized so the full experiment runs in
minutes; larger, publication-scale values are plain config entries. See
docs/config_schema.md for the documented schema.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import DataError
from .features import FrameConfig
from .network import TrainConfig
from .rt60 import EstimatorConfig


@dataclass(frozen=True)
class CorpusConfig:
    num_classes: int = 8
    train_utterances_per_condition: int = 200
    dev_utterances: int = 30
    test_utterances_per_point: int = 50
    utterance_seconds: float = 2.0
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError("corpus needs at least 2 classes")
        if min(self.train_utterances_per_condition, self.dev_utterances,
               self.test_utterances_per_point) < 1:
            raise DataError("utterance counts must be positive")
        if self.utterance_seconds <= 0 or self.sample_rate_hz <= 0:
            raise DataError("utterance length and sample rate must be positive")


@dataclass(frozen=True)
class RoomConfig:
    dimensions_m: tuple = (5.0, 3.0, 2.5)
    source_pos_m: tuple = (2.0, 1.5, 1.2)
    mic_pos_m: tuple = (2.5, 1.5, 1.2)
    speed_of_sound_mps: float = 343.0
    rir_length_factor: float = 1.4


@dataclass(frozen=True)
class SweepConfig:
    min_rt60_s: float = 0.3
    max_rt60_s: float = 0.9
    step_s: float = 0.01

    def points_ms(self) -> tuple:
        lo = int(round(self.min_rt60_s * 1000))
        hi = int(round(self.max_rt60_s * 1000))
        step = int(round(self.step_s * 1000))
        if step <= 0 or hi < lo:
            raise DataError("bad sweep range")
        return tuple(range(lo, hi + 1, step))


@dataclass(frozen=True)
class NetworksConfig:
    """Hidden-layer widths per model family.

    The feature-mapping default is a single square linear layer (no
    hidden layers): at desk scale it trains to the linear least-squares
    dereverberator, which keeps the class structure of its input intact;
    deep mappings (e.g. three 2048-unit layers) remain valid config.
    """

    member_hidden: tuple = (256, 256, 256)
    fm_hidden: tuple = ()
    sbm_hidden: tuple = (256, 256, 256)
    esbm_hidden: tuple = (320, 320, 320, 320)
    hidden_activation: str = "sigmoid"
    fm_l2_weight: float = 1e-5
    fm_center_frame_only: bool = False


@dataclass(frozen=True)
class TrainingConfig:
    """Stage-specific SGD settings (desk-scale defaults)."""

    am: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.12, epochs=16, patience=5))
    fm: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=5e-4, epochs=12, patience=4))
    joint: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.02, epochs=4, patience=4))
    baseline: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=0.12, epochs=10, patience=4))


@dataclass(frozen=True)
class FeaturesConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    normalize: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 12345
    output_dir: str = "runs/exp"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    room: RoomConfig = field(default_factory=RoomConfig)
    train_grid_rt60_s: tuple = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    test_sweep: SweepConfig = field(default_factory=SweepConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    rt60_estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    networks: NetworksConfig = field(default_factory=NetworksConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    weight_mode: str = "softmax"

    def __post_init__(self):
        grid = tuple(float(g) for g in self.train_grid_rt60_s)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise DataError("train grid must be non-empty and strictly increasing")
        sweep = self.test_sweep.points_ms()
        for g in self.grid_ms():
            if not sweep[0] <= g <= sweep[-1]:
                raise DataError(
                    f"train grid point {g / 1000.0} s outside the test sweep range"
                )
        if self.weight_mode not in ("softmax", "literal"):
            raise DataError(f"unknown weight mode {self.weight_mode!r}")
        object.__setattr__(self, "train_grid_rt60_s", grid)

    def grid_ms(self) -> tuple:
        return tuple(int(round(g * 1000)) for g in self.train_grid_rt60_s)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        def build(klass, data):
            return klass(**data) if isinstance(data, dict) else data

        raw = dict(raw)
        known = {
            "corpus": CorpusConfig,
            "room": RoomConfig,
            "test_sweep": SweepConfig,
            "rt60_estimator": EstimatorConfig,
            "networks": NetworksConfig,
        }
        kwargs = {}
        for key, value in raw.items():
            if key in known:
                kwargs[key] = build(known[key], value)
            elif key == "features":
                data = dict(value)
                if "frame" in data:
                    data["frame"] = build(FrameConfig, data["frame"])
                kwargs[key] = FeaturesConfig(**data)
            elif key == "training":
                data = {k: build(TrainConfig, v) for k, v in value.items()}
                kwargs[key] = TrainingConfig(**data)
            elif key in ("train_grid_rt60_s",):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise DataError(f"bad experiment config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
