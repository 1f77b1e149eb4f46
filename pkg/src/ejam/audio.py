"""Time-domain audio: the mono signal container, WAV I/O, convolution,
and anti-aliased downsampling.

WAV files are RIFF PCM, 16-bit signed little-endian, mono. Samples are
dimensionless amplitudes in [-1, 1].
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, resample_poly

from .errors import DataError


@dataclass(frozen=True)
class AudioSignal:
    """A mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("samples must be non-empty")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def peak_normalized(self) -> "AudioSignal":
        """Scaled copy with max |sample| <= 1 (untouched if already within)."""
        peak = float(np.max(np.abs(self.samples)))
        if peak <= 1.0 or peak == 0.0:
            return self
        return AudioSignal(self.samples / peak, self.sample_rate_hz)


def read_wav(path) -> AudioSignal:
    """Read a 16-bit PCM mono WAV file."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise DataError(f"{path}: expected mono, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        n_frames = wav.getnframes()
        if n_frames == 0:
            raise DataError(f"{path}: empty WAV file")
        raw = wav.readframes(n_frames)
        rate = wav.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioSignal(samples, rate)


def write_wav(path, signal: AudioSignal):
    """Write a 16-bit PCM mono WAV file (samples clipped to [-1, 1])."""
    if signal.samples.size == 0:
        raise DataError("refusing to write a zero-length signal")
    clipped = np.clip(signal.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(signal.sample_rate_hz)
        wav.writeframes(pcm.tobytes())


def convolve(signal: AudioSignal, rir, normalize: bool = True) -> AudioSignal:
    """Convolve a signal with an impulse response.

    Full linear convolution truncated to the input length, which keeps
    frame labels aligned with the dry signal. With ``normalize`` the
    result is rescaled only if its peak exceeds 1.
    """
    if rir.sample_rate_hz != signal.sample_rate_hz:
        raise DataError(
            f"sample-rate mismatch: signal {signal.sample_rate_hz} Hz "
            f"vs impulse response {rir.sample_rate_hz} Hz"
        )
    wet = fftconvolve(signal.samples, rir.taps)[: signal.samples.size]
    out = AudioSignal(wet, signal.sample_rate_hz)
    return out.peak_normalized() if normalize else out


def downsample(signal: AudioSignal, target_rate_hz: int) -> AudioSignal:
    """Anti-alias low-pass filter and decimate to ``target_rate_hz``."""
    if target_rate_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate_hz}")
    if target_rate_hz > signal.sample_rate_hz:
        raise DataError(
            f"cannot downsample from {signal.sample_rate_hz} Hz up to {target_rate_hz} Hz"
        )
    if target_rate_hz == signal.sample_rate_hz:
        return signal
    g = math.gcd(target_rate_hz, signal.sample_rate_hz)
    up, down = target_rate_hz // g, signal.sample_rate_hz // g
    out = resample_poly(signal.samples, up, down)
    return AudioSignal(out, target_rate_hz)
