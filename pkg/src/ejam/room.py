"""Shoebox room simulation: reflection-coefficient selection, image-source
impulse responses, and reverberation-time measurement.

The simulator mirrors the source across the walls of a rectangular room
(the image-source method) and places each image's contribution with a
windowed-sinc fractional-delay kernel spanning +/-8 taps. A single
pressure reflection coefficient is applied to all six walls; it is derived
from the requested RT60 by inverting Eyring's reverberation formula

    RT60 = (24 ln 10 / c) * V / (-S * ln(1 - alpha)),   alpha = 1 - beta^2

with room volume V, total surface area S, and speed of sound c.

``measure_rt60_schroeder`` provides an independent check: it backward-
integrates the squared impulse response into an energy decay curve and
fits a line to the -5 dB .. -25 dB span, extrapolated to -60 dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasibleRoomError, UnmeasurableDecayError

DEFAULT_SPEED_OF_SOUND_MPS = 343.0

# Fractional-delay kernel half-width in taps.
DELAY_KERNEL_HALF_WIDTH = 8

# Default impulse response length as a multiple of the target RT60; covers
# the full 60 dB decay with margin for deep decay-range fits.
RIR_LENGTH_FACTOR = 1.4


@dataclass(frozen=True)
class RoomSpec:
    """Geometry and target reverberation for one simulated room.

    Parameters
    ----------
    dimensions_m : (Lx, Ly, Lz) box dimensions in meters.
    source_pos_m, mic_pos_m : positions strictly inside the box.
    target_rt60_s : reverberation time the wall reflectivity should yield.
    max_rir_length_s : impulse response truncation point; defaults to
        1.25 * target_rt60_s.
    speed_of_sound_mps : propagation speed, 343 m/s by default.
    """

    dimensions_m: tuple
    source_pos_m: tuple
    mic_pos_m: tuple
    target_rt60_s: float
    max_rir_length_s: Optional[float] = None
    speed_of_sound_mps: float = DEFAULT_SPEED_OF_SOUND_MPS

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions_m)
        src = tuple(float(v) for v in self.source_pos_m)
        mic = tuple(float(v) for v in self.mic_pos_m)
        if len(dims) != 3 or len(src) != 3 or len(mic) != 3:
            raise ValueError("dimensions and positions must have 3 components")
        if any(d <= 0 for d in dims):
            raise ValueError(f"room dimensions must be positive, got {dims}")
        for name, pos in (("source", src), ("mic", mic)):
            if not all(0.0 < p < d for p, d in zip(pos, dims)):
                raise ValueError(f"{name} position {pos} not strictly inside room {dims}")
        if self.target_rt60_s <= 0:
            raise ValueError(f"target_rt60_s must be positive, got {self.target_rt60_s}")
        if self.speed_of_sound_mps <= 0:
            raise ValueError("speed_of_sound_mps must be positive")
        if math.dist(src, mic) == 0.0:
            raise ValueError("source and mic positions must differ")
        object.__setattr__(self, "dimensions_m", dims)
        object.__setattr__(self, "source_pos_m", src)
        object.__setattr__(self, "mic_pos_m", mic)

    @property
    def volume_m3(self) -> float:
        lx, ly, lz = self.dimensions_m
        return lx * ly * lz

    @property
    def surface_area_m2(self) -> float:
        lx, ly, lz = self.dimensions_m
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    @property
    def source_mic_distance_m(self) -> float:
        return math.dist(self.source_pos_m, self.mic_pos_m)

    @property
    def rir_length_s(self) -> float:
        if self.max_rir_length_s is not None:
            return self.max_rir_length_s
        return RIR_LENGTH_FACTOR * self.target_rt60_s


@dataclass(frozen=True)
class ImpulseResponse:
    """A sampled room impulse response and the room that produced it."""

    taps: np.ndarray
    sample_rate_hz: int
    meta: Optional[RoomSpec] = None

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D array")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if not np.any(taps != 0.0):
            raise ValueError("impulse response has zero energy")
        if self.meta is not None:
            min_len = math.ceil(self.meta.target_rt60_s * self.sample_rate_hz)
            if taps.size < min_len:
                raise ValueError(
                    f"impulse response too short to hold the decay: "
                    f"{taps.size} taps < {min_len}"
                )
        object.__setattr__(self, "taps", taps)


def _eyring_exponent(room: RoomSpec, rt60_s: float) -> float:
    sabine_k = 24.0 * math.log(10.0) / room.speed_of_sound_mps
    return sabine_k * room.volume_m3 / (room.surface_area_m2 * rt60_s)


def eyring_rt60(room: RoomSpec, reflection_coefficient: float) -> float:
    """RT60 predicted by Eyring's formula for a uniform wall coefficient."""
    beta = float(reflection_coefficient)
    if not 0.0 < beta < 1.0:
        raise ValueError(f"reflection coefficient must lie in (0, 1), got {beta}")
    sabine_k = 24.0 * math.log(10.0) / room.speed_of_sound_mps
    return sabine_k * room.volume_m3 / (-room.surface_area_m2 * math.log(beta * beta))


def reflection_from_rt60(room: RoomSpec) -> float:
    """Uniform pressure reflection coefficient realizing the room's target RT60.

    Inverts Eyring's formula: beta = exp(-x/2) with
    x = (24 ln 10 / c) V / (S * RT60). Raises InfeasibleRoomError when the
    required absorption is numerically total (beta underflows toward 0).
    """
    x = _eyring_exponent(room, room.target_rt60_s)
    beta = math.exp(-0.5 * x)
    if beta <= 1e-9:
        raise InfeasibleRoomError(
            f"target RT60 {room.target_rt60_s} s needs absorption > 1 for this room"
        )
    if beta >= 1.0:
        raise InfeasibleRoomError("degenerate room: required reflection reaches 1")
    return beta


def _delay_kernel_accumulate(rir, delays_samples, amplitudes, n_taps):
    """Scatter windowed-sinc fractional-delay pulses into ``rir`` (in place).

    The raised-cosine window is exactly zero at |t| = 8 samples, so tap
    offsets -7..8 around floor(delay) cover the whole kernel support.
    """
    half = DELAY_KERNEL_HALF_WIDTH
    chunk = 4_000_000
    for lo in range(0, delays_samples.size, chunk):
        delays = delays_samples[lo : lo + chunk]
        amps = amplitudes[lo : lo + chunk]
        base = np.floor(delays).astype(np.int64)
        frac = delays - base
        for j in range(-half + 1, half + 1):
            idx = base + j
            t = j - frac  # sample offset from the exact delay, in (-8, 8]
            valid = (idx >= 0) & (idx < n_taps)
            if not np.any(valid):
                continue
            tv = t[valid]
            w = 0.5 * (1.0 + np.cos(np.pi * tv / half))
            contrib = amps[valid] * w * np.sinc(tv)
            rir += np.bincount(idx[valid], weights=contrib, minlength=n_taps)


def _decay_components(room: RoomSpec, sample_rate_hz, n_taps, direct_only, seed, image_jitter_m):
    """Image-source contributions bucketed by reflection count.

    Returns a ``(max_reflections + 1, n_taps)`` matrix whose row k holds the
    kernel-scattered 1/(4*pi*d) amplitudes of every image reached after
    exactly k wall reflections. The impulse response for a uniform wall
    coefficient beta is then ``sum_k beta**k * comps[k]``, so re-rendering
    at a different coefficient costs almost nothing.
    """
    c = room.speed_of_sound_mps
    dims = np.asarray(room.dimensions_m)
    src = np.asarray(room.source_pos_m)
    mic = np.asarray(room.mic_pos_m)
    max_dist = c * (n_taps + DELAY_KERNEL_HALF_WIDTH + 1) / sample_rate_hz

    rng = np.random.default_rng(seed) if image_jitter_m > 0.0 else None

    if direct_only:
        orders = [np.array([0]), np.array([0]), np.array([0])]
        parities = [(0, 0, 0)]
    else:
        orders = [
            np.arange(-int(math.ceil((max_dist + d) / (2.0 * d))),
                      int(math.ceil((max_dist + d) / (2.0 * d))) + 1)
            for d in dims
        ]
        parities = [(px, py, pz) for px in (0, 1) for py in (0, 1) for pz in (0, 1)]

    ny, nz = np.meshgrid(orders[1], orders[2], indexing="ij")
    ny = ny.ravel()
    nz = nz.ravel()
    origin_flat = np.nonzero((ny == 0) & (nz == 0))[0]

    delay_chunks = []
    amp_chunks = []
    count_chunks = []
    for nx in orders[0]:
        for px, py, pz in parities:
            # Image coordinates: mirror parity p flips the source, lattice
            # index n shifts by whole room periods.
            ix = np.full(ny.size, (1 - 2 * px) * src[0] + 2.0 * nx * dims[0])
            iy = (1 - 2 * py) * src[1] + 2.0 * ny * dims[1]
            iz = (1 - 2 * pz) * src[2] + 2.0 * nz * dims[2]
            if rng is not None:
                jitter = rng.uniform(-image_jitter_m, image_jitter_m, (3, ny.size))
                if nx == 0 and (px, py, pz) == (0, 0, 0):
                    jitter[:, origin_flat] = 0.0  # never displace the true source
                ix = ix + jitter[0]
                iy = iy + jitter[1]
                iz = iz + jitter[2]
            dx = ix - mic[0]
            dy = iy - mic[1]
            dz = iz - mic[2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            keep = (dist <= max_dist) & (dist > 1e-9)
            if not np.any(keep):
                continue
            dist = dist[keep]
            # Image at (1-2p)s + 2nL hits the wall at the origin |n - p|
            # times and the opposite wall |n| times, per axis.
            n_reflections = (
                abs(nx - px) + abs(nx)
                + np.abs(ny[keep] - py) + np.abs(ny[keep])
                + np.abs(nz[keep] - pz) + np.abs(nz[keep])
            )
            amp_chunks.append(1.0 / (4.0 * np.pi * dist))
            delay_chunks.append(dist / c * sample_rate_hz)
            count_chunks.append(n_reflections.astype(np.int64))

    delays = np.concatenate(delay_chunks)
    amplitudes = np.concatenate(amp_chunks)
    counts = np.concatenate(count_chunks)
    n_orders = int(counts.max()) + 1

    comps = np.zeros(n_orders * n_taps, dtype=np.float64)
    half = DELAY_KERNEL_HALF_WIDTH
    chunk = 4_000_000
    for lo in range(0, delays.size, chunk):
        dl = delays[lo : lo + chunk]
        am = amplitudes[lo : lo + chunk]
        ct = counts[lo : lo + chunk]
        base = np.floor(dl).astype(np.int64)
        frac = dl - base
        for j in range(-half + 1, half + 1):
            idx = base + j
            t = j - frac
            valid = (idx >= 0) & (idx < n_taps)
            if not np.any(valid):
                continue
            tv = t[valid]
            w = 0.5 * (1.0 + np.cos(np.pi * tv / half))
            contrib = am[valid] * w * np.sinc(tv)
            flat = ct[valid] * n_taps + idx[valid]
            comps += np.bincount(flat, weights=contrib, minlength=comps.size)
    return comps.reshape(n_orders, n_taps)


def generate_rir(
    room: RoomSpec,
    sample_rate_hz: int,
    seed: int = 0,
    reflection_coefficient: Optional[float] = None,
    image_jitter_m: float = 0.0,
    calibrate: bool = True,
    calibration_tolerance: float = 0.05,
    max_calibration_rounds: int = 4,
    calibration_fit_range_db: tuple = (-8.0, -38.0),
) -> ImpulseResponse:
    """Simulate the room impulse response with the image-source method.

    The wall coefficient starts from the Eyring inversion of the target
    RT60. Because a non-cubic box with uniform walls decays non-diffusely
    (directions along the longest axis lose less energy per meter), the
    raw Eyring coefficient yields a measurably slower decay than intended,
    so by default the coefficient is calibrated: render, measure with
    ``measure_rt60_schroeder``, and remap ``beta <- beta**(measured/target)``
    until the measured RT60 is within ``calibration_tolerance`` of target.
    Re-rendering reuses the image lattice, so calibration is cheap.

    Calibration fits a deeper decay span (default -8 dB to -38 dB) than
    the default measurement: free-decay stretches of reverberant audio
    sample the decay roughly over that range, and anchoring its slope
    keeps blind decay estimates centered on the nominal RT60.

    Parameters
    ----------
    room : RoomSpec
        Geometry and target RT60.
    sample_rate_hz : output sampling rate.
    seed : RNG seed; only consumed when ``image_jitter_m`` > 0, which
        displaces image sources randomly to break lattice regularity.
    reflection_coefficient : optional explicit uniform wall coefficient in
        [0, 1); bypasses both Eyring and calibration. 0 gives the anechoic
        (direct path only) response.

    Returns
    -------
    ImpulseResponse
        ``ceil(room.rir_length_s * sample_rate_hz)`` taps.
    """
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    if reflection_coefficient is None:
        beta = reflection_from_rt60(room)
    else:
        beta = float(reflection_coefficient)
        if not 0.0 <= beta < 1.0:
            raise ValueError(f"reflection coefficient must lie in [0, 1), got {beta}")
        calibrate = False

    n_taps = int(math.ceil(room.rir_length_s * sample_rate_hz))
    comps = _decay_components(
        room, sample_rate_hz, n_taps, direct_only=(beta == 0.0),
        seed=seed, image_jitter_m=image_jitter_m,
    )
    ks = np.arange(comps.shape[0], dtype=np.float64)

    def render(b):
        return ImpulseResponse((b ** ks) @ comps, sample_rate_hz, meta=room)

    rir = render(beta)
    if calibrate:
        target = room.target_rt60_s
        for _ in range(max_calibration_rounds):
            try:
                measured = measure_rt60_schroeder(rir, calibration_fit_range_db)
            except UnmeasurableDecayError:
                break
            if abs(measured / target - 1.0) <= calibration_tolerance:
                break
            beta = beta ** (measured / target)
            rir = render(beta)
    return rir


def direct_path_delay_samples(rir: ImpulseResponse) -> int:
    """Arrival index of the direct path: first tap >= half the peak magnitude."""
    mags = np.abs(rir.taps)
    threshold = 0.5 * float(np.max(mags))
    return int(np.argmax(mags >= threshold))


def energy_decay_curve(rir: ImpulseResponse) -> np.ndarray:
    """Backward-integrated squared taps, normalized to start at 1."""
    energy = rir.taps.astype(np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    return edc / edc[0]


def measure_rt60_schroeder(
    rir: ImpulseResponse,
    fit_range_db: tuple = (-5.0, -25.0),
) -> float:
    """Reverberation time from the Schroeder energy decay curve.

    Least-squares line through the decay between ``fit_range_db`` levels
    (defaults -5 dB to -25 dB), extrapolated to -60 dB. Raises
    UnmeasurableDecayError when the response does not contain the full
    fit range or the fitted slope is not a decay.
    """
    hi, lo = fit_range_db
    if not (hi > lo):
        raise ValueError("fit_range_db must be (upper, lower) with upper > lower")
    edc = energy_decay_curve(rir)
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(np.maximum(edc, 1e-300))
    below_hi = np.nonzero(edc_db <= hi)[0]
    below_lo = np.nonzero(edc_db <= lo)[0]
    if below_hi.size == 0 or below_lo.size == 0:
        raise UnmeasurableDecayError(
            f"decay range shorter than {hi - lo:.0f} dB within the impulse response"
        )
    i_start, i_end = below_hi[0], below_lo[0]
    if i_end - i_start < 2:
        raise UnmeasurableDecayError("too few samples between fit levels")
    times = np.arange(i_start, i_end + 1) / rir.sample_rate_hz
    slope, _ = np.polyfit(times, edc_db[i_start : i_end + 1], 1)
    if slope >= 0:
        raise UnmeasurableDecayError("energy decay curve is not decreasing")
    return -60.0 / slope
