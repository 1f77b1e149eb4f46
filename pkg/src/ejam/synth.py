"""Synthetic labeled speech-like sources.

Utterances are sequences of frame-level class labels rendered to audio.
Each class has a fixed spectral prototype (a harmonic-friendly magnitude
envelope with formant-like peaks); a frame's short-time spectrum follows
the prototype of its label, scaled by an optional per-frame gain, plus a
low-level shaped excitation-noise component. Gains let a caller shape
syllable envelopes and silent pauses while labels stay aligned to frames.

All randomness is drawn from the seed argument, so identical inputs give
bit-identical audio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioSignal
from .features import FrameConfig

# Relative RMS of the spectrally shaped noise added to the harmonic part.
EXCITATION_NOISE_MIX = 0.5

# Per-syllable pitch spread around the utterance base (fraction). Varying
# the pitch between syllables keeps their reverberant tails from locking
# onto one set of room modes.
F0_SYLLABLE_SPREAD = 0.15


@dataclass(frozen=True)
class LabeledUtterance:
    """Audio plus one class label per analysis frame."""

    audio: AudioSignal
    frame_labels: np.ndarray
    class_count: int

    def __post_init__(self):
        labels = np.asarray(self.frame_labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("frame_labels must be a non-empty 1-D array")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError("frame labels out of range")
        object.__setattr__(self, "frame_labels", labels)


def make_class_prototypes(
    num_classes: int,
    num_bins: int,
    sample_rate_hz: int = 16000,
    seed: int = 0,
) -> np.ndarray:
    """Build ``(num_classes, num_bins)`` magnitude envelopes on the rfft grid.

    Every class gets three formant-like resonance peaks at class-specific
    frequencies over a gentle low-pass slope, which keeps the classes
    spectrally distinct but broadband.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng([seed, 0x70726F74])
    nyquist = sample_rate_hz / 2.0
    freqs = np.linspace(0.0, nyquist, num_bins)
    # Divide the usable band into slots so prototype peaks never collide.
    lo, hi = 250.0, min(6000.0, 0.85 * nyquist)
    slots = np.linspace(lo, hi, 3 * num_classes)
    protos = np.empty((num_classes, num_bins))
    for k in range(num_classes):
        centers = rng.permuted(slots[k::num_classes])[:3]
        bandwidths = rng.uniform(120.0, 300.0, 3)
        peak_gains = rng.uniform(0.5, 1.0, 3)
        env = np.full(num_bins, 0.02)
        env += 0.05 / (1.0 + (freqs / 1500.0) ** 2)
        for c, bw, g in zip(centers, bandwidths, peak_gains):
            env += g * np.exp(-0.5 * ((freqs - c) / bw) ** 2)
        protos[k] = env / env.max()
    return protos


def _render_span(length, base_f0, envelope, freqs, sample_rate_hz, rng):
    """One continuous span of a single class: harmonics plus shaped noise."""
    t = np.arange(length) / sample_rate_hz
    out = np.zeros(length)
    f0 = base_f0 * (1.0 + rng.uniform(-F0_SYLLABLE_SPREAD, F0_SYLLABLE_SPREAD))
    n_harmonics = int(0.95 * (sample_rate_hz / 2.0) / f0)
    harmonic_freqs = f0 * np.arange(1, n_harmonics + 1)
    gains = np.interp(harmonic_freqs, freqs, envelope)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_harmonics)
    for hf, g, ph in zip(harmonic_freqs, gains, phases):
        out += g * np.sin(2.0 * np.pi * hf * t + ph)
    harmonic_rms = np.sqrt(np.mean(out**2)) if length else 0.0

    noise = rng.standard_normal(length)
    spectrum = np.fft.rfft(noise)
    bin_freqs = np.fft.rfftfreq(length, 1.0 / sample_rate_hz)
    spectrum *= np.interp(bin_freqs, freqs, envelope)
    noise = np.fft.irfft(spectrum, length)
    noise_rms = np.sqrt(np.mean(noise**2))
    if noise_rms > 0.0 and harmonic_rms > 0.0:
        out += noise * (EXCITATION_NOISE_MIX * harmonic_rms / noise_rms)
    return out


def synth_source(
    class_sequence,
    per_class_spectra: np.ndarray,
    frame_cfg: FrameConfig,
    seed: int,
    sample_rate_hz: int = 16000,
    frame_gains=None,
) -> LabeledUtterance:
    """Render a per-frame class sequence to audio.

    Parameters
    ----------
    class_sequence : one class index per analysis frame.
    per_class_spectra : (K, num_bins) prototype envelopes on a uniform
        0..Nyquist frequency grid (see ``make_class_prototypes``).
    frame_cfg : framing used later for analysis; sets frame/shift lengths.
    seed : RNG seed for phases, noise, and the utterance pitch.
    frame_gains : optional per-frame amplitude, linearly interpolated
        between frame centers; zeros create silent gaps.

    Returns
    -------
    LabeledUtterance whose audio spans exactly
    ``frame_len + (n_frames - 1) * frame_shift`` samples.
    """
    labels = np.asarray(class_sequence, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("class_sequence must be non-empty")
    k = per_class_spectra.shape[0]
    if k < 2:
        raise ValueError("need at least 2 class prototypes")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("class_sequence contains out-of-range labels")
    if frame_gains is not None:
        frame_gains = np.asarray(frame_gains, dtype=np.float64)
        if frame_gains.shape != labels.shape:
            raise ValueError("frame_gains must match class_sequence length")

    rng = np.random.default_rng([seed, 0x73796E74])
    frame_len = frame_cfg.frame_len(sample_rate_hz)
    shift = frame_cfg.frame_shift(sample_rate_hz)
    n_frames = labels.size
    total = frame_len + (n_frames - 1) * shift
    freqs = np.linspace(0.0, sample_rate_hz / 2.0, per_class_spectra.shape[1])
    f0 = rng.uniform(110.0, 180.0)

    audio = np.zeros(total)
    # Contiguous runs of one class own the sample span of their frames.
    run_starts = np.flatnonzero(np.diff(labels)) + 1
    bounds = np.concatenate(([0], run_starts, [n_frames]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        start = a * shift
        end = total if b == n_frames else b * shift
        audio[start:end] = _render_span(
            end - start, f0, per_class_spectra[labels[a]], freqs, sample_rate_hz, rng
        )

    if frame_gains is not None:
        centers = np.arange(n_frames) * shift + frame_len / 2.0
        audio *= np.interp(np.arange(total), centers, frame_gains)

    peak = np.max(np.abs(audio))
    if peak > 1.0:
        audio /= peak
    return LabeledUtterance(AudioSignal(audio, sample_rate_hz), labels, k)
