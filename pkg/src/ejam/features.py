"""Log mel-filterbank front end.

The pipeline is: window the signal into frames, take log energies of
triangular mel-spaced filters on the magnitude spectrum, append first and
second time derivatives, then splice a symmetric context window of frames
into one vector. Under the defaults (24 bands, +-2 delta window, +-5
context) the dimensions run 24 -> 72 -> 792.

Mean/variance normalization is a separate step so corpus statistics can
be estimated once and re-applied to held-out data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .matrixio import read_matrix, write_matrix

LOG_FLOOR = 1e-10
VARIANCE_FLOOR = 1e-8

STAGE_BASE = "base"
STAGE_DELTAS = "with_deltas"
STAGE_SPLICED = "spliced"

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rect": np.ones,
}


@dataclass(frozen=True)
class FrameConfig:
    """Framing and feature-dimension configuration."""

    frame_len_ms: float = 25.0
    frame_shift_ms: float = 10.0
    window: str = "hamming"
    num_bands: int = 24
    delta_window: int = 2
    context_radius: int = 5

    def __post_init__(self):
        if not self.frame_len_ms >= self.frame_shift_ms > 0:
            raise ValueError("need frame_len_ms >= frame_shift_ms > 0")
        if self.num_bands < 1:
            raise ValueError("num_bands must be >= 1")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")
        if self.context_radius < 0:
            raise ValueError("context_radius must be >= 0")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    def frame_len(self, sample_rate_hz: int) -> int:
        return int(round(self.frame_len_ms * sample_rate_hz / 1000.0))

    def frame_shift(self, sample_rate_hz: int) -> int:
        return int(round(self.frame_shift_ms * sample_rate_hz / 1000.0))

    def fft_size(self, sample_rate_hz: int) -> int:
        n = 1
        while n < self.frame_len(sample_rate_hz):
            n *= 2
        return n

    def spliced_dim(self) -> int:
        return 3 * self.num_bands * (2 * self.context_radius + 1)


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and variance used for normalization."""

    mean: np.ndarray
    var: np.ndarray

    def save(self, path):
        write_matrix(path, np.vstack([self.mean, self.var]), meta={"kind": "norm_stats"})

    @classmethod
    def load(cls, path):
        matrix, _ = read_matrix(path)
        return cls(mean=matrix[0], var=matrix[1])


@dataclass(frozen=True)
class FeatureSequence:
    """A T x D feature matrix and the processing stage it is at."""

    frames: np.ndarray
    stage: str
    stats: Optional[NormStats] = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError("frames must be 2-D (frames x dims)")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def num_frames(signal_len: int, cfg: FrameConfig, sample_rate_hz: int) -> int:
    """Frame count for a signal of ``signal_len`` samples."""
    frame_len = cfg.frame_len(sample_rate_hz)
    if signal_len < frame_len:
        raise ValueError(f"signal ({signal_len} samples) shorter than one frame ({frame_len})")
    return 1 + (signal_len - frame_len) // cfg.frame_shift(sample_rate_hz)


def frame_signal(signal, cfg: FrameConfig) -> np.ndarray:
    """Slice a signal into overlapping windowed frames (T x frame_len)."""
    x = signal.samples
    rate = signal.sample_rate_hz
    frame_len = cfg.frame_len(rate)
    shift = cfg.frame_shift(rate)
    t = num_frames(x.size, cfg, rate)
    idx = np.arange(frame_len)[None, :] + shift * np.arange(t)[:, None]
    window = _WINDOWS[cfg.window](frame_len)
    return x[idx] * window


def mel_filterbank_matrix(cfg: FrameConfig, sample_rate_hz: int) -> np.ndarray:
    """Triangular unit-peak filters on the mel scale, (num_bands x bins)."""
    n_fft = cfg.fft_size(sample_rate_hz)
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate_hz / n_fft

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    points = from_mel(np.linspace(0.0, to_mel(sample_rate_hz / 2.0), cfg.num_bands + 2))
    bank = np.zeros((cfg.num_bands, n_bins))
    for b in range(cfg.num_bands):
        left, center, right = points[b], points[b + 1], points[b + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
        # narrow filters peak between bins; renormalize so every filter
        # reaches unit peak on the sampled grid
        bank[b] /= bank[b].max()
    return bank


def logmel_filterbank(frames: np.ndarray, cfg: FrameConfig, sample_rate_hz: int) -> FeatureSequence:
    """Log mel-filterbank energies of windowed frames (stage ``base``)."""
    n_fft = cfg.fft_size(sample_rate_hz)
    spectra = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    bank = mel_filterbank_matrix(cfg, sample_rate_hz)
    energies = spectra @ bank.T
    return FeatureSequence(np.log(np.maximum(energies, LOG_FLOOR)), STAGE_BASE)


def _regression_deltas(frames: np.ndarray, half_window: int) -> np.ndarray:
    t = frames.shape[0]
    out = np.zeros_like(frames)
    denom = 2.0 * sum(j * j for j in range(1, half_window + 1))
    for j in range(1, half_window + 1):
        fwd = frames[np.minimum(np.arange(t) + j, t - 1)]
        bwd = frames[np.maximum(np.arange(t) - j, 0)]
        out += j * (fwd - bwd)
    return out / denom


def append_deltas(seq: FeatureSequence, cfg: FrameConfig) -> FeatureSequence:
    """Append first and second regression derivatives (stage ``with_deltas``)."""
    if seq.stage != STAGE_BASE:
        raise ValueError(f"append_deltas expects stage {STAGE_BASE!r}, got {seq.stage!r}")
    delta = _regression_deltas(seq.frames, cfg.delta_window)
    delta2 = _regression_deltas(delta, cfg.delta_window)
    return FeatureSequence(np.hstack([seq.frames, delta, delta2]), STAGE_DELTAS)


def splice_indices(t: int, context_radius: int) -> np.ndarray:
    """(T x 2tau+1) frame indices with edges replicated."""
    offsets = np.arange(-context_radius, context_radius + 1)
    return np.clip(np.arange(t)[:, None] + offsets[None, :], 0, t - 1)


def splice(seq: FeatureSequence, context_radius: int) -> FeatureSequence:
    """Concatenate each frame with its +-tau neighbors (stage ``spliced``)."""
    if seq.stage != STAGE_DELTAS:
        raise ValueError(f"splice expects stage {STAGE_DELTAS!r}, got {seq.stage!r}")
    if context_radius < 0:
        raise ValueError("context_radius must be >= 0")
    t, d = seq.frames.shape
    idx = splice_indices(t, context_radius)
    spliced = seq.frames[idx].reshape(t, d * (2 * context_radius + 1))
    return FeatureSequence(spliced, STAGE_SPLICED, stats=seq.stats)


def compute_norm_stats(frames: np.ndarray) -> NormStats:
    """Per-dimension mean/variance with the variance floor applied."""
    mean = frames.mean(axis=0)
    var = np.maximum(frames.var(axis=0), VARIANCE_FLOOR)
    return NormStats(mean=mean, var=var)


def normalize(seq: FeatureSequence, stats: Optional[NormStats] = None):
    """Mean/variance-normalize; returns ``(sequence, stats)``.

    With ``stats=None`` the statistics are estimated from the sequence
    itself; otherwise the given statistics are applied unchanged.
    """
    if stats is None:
        stats = compute_norm_stats(seq.frames)
    scaled = (seq.frames - stats.mean) / np.sqrt(stats.var)
    return FeatureSequence(scaled, seq.stage, stats=stats), stats


def extract_features(
    signal,
    cfg: FrameConfig,
    stats: Optional[NormStats] = None,
    do_normalize: bool = True,
) -> FeatureSequence:
    """Full front end: frame -> log-mel -> deltas -> (normalize) -> splice."""
    base = logmel_filterbank(frame_signal(signal, cfg), cfg, signal.sample_rate_hz)
    seq = append_deltas(base, cfg)
    if do_normalize:
        seq, _ = normalize(seq, stats)
    return splice(seq, cfg.context_radius)
