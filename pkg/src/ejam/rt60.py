"""Blind maximum-likelihood reverberation-time estimation.

Free sound decay after a source stops is modeled as

    d(k) = A * v(k) * exp(-rho * k * T_s),   k = 0 .. N-1

with amplitude A, decay rate rho (1/s), sampling period T_s, and v(k)
i.i.d. standard normal. Concentrating the likelihood over A gives, with
a = exp(-T_s * rho),

    L(rho) = -(N/2) * [ (N-1) ln a + ln( (2 pi / N) * sum_{i=1}^{N-1}
             a^(-2i) d(i)^2 ) + 1 ]

which is evaluated on a decay-rate grid; the arg max is the estimate and
RT60 follows from RT60 = 6.908 / rho. The amplified sum is computed in
the log domain (log-sum-exp), so large rho * N * T_s cannot overflow.

Estimating a whole utterance chains: anti-aliased downsampling, energy
pre-selection of candidate free-decay segments, per-segment likelihood
curves, and aggregation by averaging the curves across segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import logsumexp

from .audio import AudioSignal, downsample
from .errors import NumericError, UndecidableError

# RT60 = DECAY_TO_RT60 / rho: time to fall 60 dB at amplitude decay rate
# rho, i.e. 3 / log10(e) up to the rounding used throughout this toolkit.
DECAY_TO_RT60 = 6.908


@dataclass(frozen=True)
class DecayModelParams:
    """Parameters of the stochastic exponential-decay model."""

    amplitude: float
    decay_rate: float
    sampling_period_s: float
    segment_len: int

    def __post_init__(self):
        if self.decay_rate <= 0:
            raise ValueError("decay_rate must be positive")
        if self.sampling_period_s <= 0:
            raise ValueError("sampling_period_s must be positive")
        if self.segment_len < 2:
            raise ValueError("segment_len must be >= 2")

    @property
    def per_sample_factor(self) -> float:
        """a = exp(-T_s * rho), the amplitude ratio between samples."""
        return math.exp(-self.sampling_period_s * self.decay_rate)


@dataclass(frozen=True)
class DecaySegment:
    """A candidate free-decay stretch of a (downsampled) signal."""

    samples: np.ndarray
    sample_rate_hz: int
    start_s: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 2:
            raise ValueError("segment needs at least 2 samples")
        if not np.any(samples != 0.0):
            raise ValueError("segment is all zero")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class LikelihoodCurve:
    """Log-likelihood over a decay-rate grid, sorted by increasing rho."""

    rho: np.ndarray
    loglik: np.ndarray
    argmax_index: int

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        ll = np.asarray(self.loglik, dtype=np.float64)
        if rho.ndim != 1 or rho.shape != ll.shape or rho.size == 0:
            raise ValueError("rho and loglik must be matching non-empty 1-D arrays")
        if np.any(np.diff(rho) <= 0):
            raise ValueError("rho grid must be strictly increasing")
        if ll[self.argmax_index] != ll.max():
            raise ValueError("argmax_index inconsistent with stored values")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "loglik", ll)

    @classmethod
    def from_values(cls, rho, loglik):
        loglik = np.asarray(loglik, dtype=np.float64)
        # Ties break toward smaller rho; argmax returns the first maximum.
        return cls(rho, loglik, int(np.argmax(loglik)))

    @property
    def rho_hat(self) -> float:
        return float(self.rho[self.argmax_index])

    @property
    def rt60_s(self) -> np.ndarray:
        return DECAY_TO_RT60 / self.rho


@dataclass(frozen=True)
class RtEstimate:
    """Blind estimate for one utterance with its evidence."""

    rho_hat: float
    rt60_s: float
    per_segment: List[LikelihoodCurve]
    aggregated_curve: LikelihoodCurve

    def __post_init__(self):
        if self.rt60_s <= 0:
            raise ValueError("rt60_s must be positive")
        if abs(self.rt60_s - DECAY_TO_RT60 / self.rho_hat) > 1e-9:
            raise ValueError("rt60_s inconsistent with rho_hat")


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the utterance-level blind estimator.

    ``shape_tolerance`` bounds how far a window's three block-energy
    ratios may deviate from a single exponential before it is dropped.
    ``sharpness_cap`` rejects windows whose likelihood curve is sharper
    than a multiple of the matched-model expectation (such curves come
    from structured content, not free decay), and boundary-peak curves
    (arg max pinned to a grid edge) are rejected as invalid fits.
    """

    grid_min_rt60_s: float = 0.2
    grid_max_rt60_s: float = 1.2
    grid_step_s: float = 0.01
    downsample_hz: int = 2000
    segment_len: int = 600
    segment_hop: int = 50
    noise_floor_dbfs: float = -50.0
    shape_tolerance: float = 0.6
    sharpness_cap: float = 3.0
    reject_boundary_peaks: bool = True
    include_first_sample: bool = False
    min_signal_s: float = 0.5

    def rho_grid(self) -> np.ndarray:
        """Decay-rate grid mapped from the RT60 range, increasing in rho."""
        step_ms = int(round(self.grid_step_s * 1000))
        lo_ms = int(round(self.grid_min_rt60_s * 1000))
        hi_ms = int(round(self.grid_max_rt60_s * 1000))
        if step_ms <= 0 or hi_ms <= lo_ms:
            raise ValueError("bad RT60 grid")
        rt60 = np.arange(lo_ms, hi_ms + step_ms, step_ms, dtype=np.float64) / 1000.0
        return DECAY_TO_RT60 / rt60[::-1]


def rho_to_rt60(rho: float) -> float:
    """Decay rate (1/s) to the time to decay by 60 dB (s)."""
    if rho <= 0:
        raise ValueError(f"decay rate must be positive, got {rho}")
    return DECAY_TO_RT60 / rho


def rt60_to_rho(rt60_s: float) -> float:
    """Inverse of :func:`rho_to_rt60`."""
    if rt60_s <= 0:
        raise ValueError(f"RT60 must be positive, got {rt60_s}")
    return DECAY_TO_RT60 / rt60_s


def synth_decay(params: DecayModelParams, seed: int) -> DecaySegment:
    """Draw one segment from the decay model (Gaussian v(k))."""
    rng = np.random.default_rng([seed, 0x64656361])
    k = np.arange(params.segment_len)
    envelope = params.amplitude * np.exp(-params.decay_rate * k * params.sampling_period_s)
    samples = envelope * rng.standard_normal(params.segment_len)
    return DecaySegment(samples, int(round(1.0 / params.sampling_period_s)))


def log_likelihood_grid(
    segment: DecaySegment,
    rho_grid,
    include_first_sample: bool = False,
) -> np.ndarray:
    """Decay-model log-likelihood at every grid decay rate (vectorized)."""
    rho = np.atleast_1d(np.asarray(rho_grid, dtype=np.float64))
    if np.any(rho <= 0):
        raise ValueError("decay rates must be positive")
    d = segment.samples
    n = d.size
    ts = 1.0 / segment.sample_rate_hz
    start = 0 if include_first_sample else 1
    d2 = d[start:] ** 2
    if not np.any(d2 > 0.0):
        raise NumericError("all samples in the likelihood sum are zero")
    i = np.arange(start, n, dtype=np.float64)
    # ln sum_i a^(-2i) d(i)^2 = LSE_i(2 T_s rho i + ln d(i)^2), stable for
    # arbitrarily large rho * N * T_s.
    log_sum = logsumexp(2.0 * ts * rho[:, None] * i[None, :], b=d2[None, :], axis=1)
    ln_a = -ts * rho
    values = -(n / 2.0) * ((n - 1) * ln_a + math.log(2.0 * math.pi / n) + log_sum + 1.0)
    return values


def log_likelihood(segment: DecaySegment, rho: float, include_first_sample: bool = False) -> float:
    """Decay-model log-likelihood at a single decay rate."""
    return float(log_likelihood_grid(segment, [rho], include_first_sample)[0])


def estimate_decay_ml(
    segment: DecaySegment,
    rho_grid,
    include_first_sample: bool = False,
) -> LikelihoodCurve:
    """Maximum-likelihood decay-rate estimate over a grid."""
    rho = np.asarray(rho_grid, dtype=np.float64)
    if rho.size == 0:
        raise ValueError("empty decay-rate grid")
    values = log_likelihood_grid(segment, rho, include_first_sample)
    return LikelihoodCurve.from_values(rho, values)


def preselect_decay_segments(
    signal: AudioSignal,
    seg_len: int,
    hop: int,
    noise_floor_dbfs: float = -50.0,
    shape_tolerance: float = 0.6,
) -> List[DecaySegment]:
    """Slide a window and keep stretches that look like free sound decay.

    A window qualifies when the mean energies of its three thirds are
    strictly decreasing, its peak amplitude clears the noise floor, and
    (with ``shape_tolerance``) the two successive third-to-third log
    energy ratios agree within the tolerance, as they do for a single
    exponential decay. ``shape_tolerance=None`` disables the shape test.
    """
    if seg_len < 2:
        raise ValueError("seg_len must be >= 2")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    x = signal.samples
    floor_amp = 10.0 ** (noise_floor_dbfs / 20.0)
    third = seg_len // 3
    out = []
    for start in range(0, x.size - seg_len + 1, hop):
        window = x[start : start + seg_len]
        if np.max(np.abs(window)) < floor_amp:
            continue
        e1 = np.mean(window[:third] ** 2)
        e2 = np.mean(window[third : 2 * third] ** 2)
        e3 = np.mean(window[2 * third : 3 * third] ** 2)
        if not e1 > e2 > e3:
            continue
        if shape_tolerance is not None and e3 > 0.0:
            if abs(math.log(e1 / e2) - math.log(e2 / e3)) > shape_tolerance:
                continue
        out.append(
            DecaySegment(window, signal.sample_rate_hz, start_s=start / signal.sample_rate_hz)
        )
    return out


def estimate_utterance(signal: AudioSignal, cfg: EstimatorConfig = EstimatorConfig()) -> RtEstimate:
    """Blind RT60 estimate for one utterance.

    Downsample, pre-select decay segments, evaluate each segment's
    likelihood curve on the configured grid, drop curves that contradict
    the decay model (boundary arg max or implausibly sharp peaks), average
    the surviving curves, and take the arg max. Raises UndecidableError
    when no usable segment exists.
    """
    if signal.duration_s < cfg.min_signal_s:
        raise ValueError(
            f"signal too short for estimation: {signal.duration_s:.3f} s < {cfg.min_signal_s} s"
        )
    low = downsample(signal, cfg.downsample_hz)
    segments = preselect_decay_segments(
        low, cfg.segment_len, cfg.segment_hop, cfg.noise_floor_dbfs, cfg.shape_tolerance
    )
    rho = cfg.rho_grid()
    # Fisher information of the matched decay model; bounds how sharp a
    # genuine free-decay likelihood curve can be.
    fisher = (1.0 / cfg.downsample_hz) ** 2 * cfg.segment_len**3 / 6.0
    curves = []
    for segment in segments:
        try:
            curve = estimate_decay_ml(segment, rho, cfg.include_first_sample)
        except NumericError:
            continue
        if cfg.reject_boundary_peaks and curve.argmax_index in (0, rho.size - 1):
            continue
        if cfg.sharpness_cap is not None:
            spread = float(np.median(np.abs(rho - curve.rho_hat)))
            expected = 0.5 * fisher * spread * spread
            observed = float(curve.loglik.max() - np.median(curve.loglik))
            if observed > cfg.sharpness_cap * expected:
                continue
        curves.append(curve)
    if not curves:
        raise UndecidableError("no usable free-decay segments found")
    stacked = np.stack([c.loglik for c in curves])
    aggregated = LikelihoodCurve.from_values(rho, stacked.mean(axis=0))
    rho_hat = aggregated.rho_hat
    return RtEstimate(
        rho_hat=rho_hat,
        rt60_s=rho_to_rt60(rho_hat),
        per_segment=curves,
        aggregated_curve=aggregated,
    )
