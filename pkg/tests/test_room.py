import math

import numpy as np
import pytest

from ejam.errors import InfeasibleRoomError, UnmeasurableDecayError
from ejam.room import (
    ImpulseResponse,
    RoomSpec,
    direct_path_delay_samples,
    eyring_rt60,
    generate_rir,
    measure_rt60_schroeder,
    reflection_from_rt60,
)

FS = 16000


def paper_room(rt60_s, **kwargs):
    return RoomSpec(
        dimensions_m=(5.0, 3.0, 2.5),
        source_pos_m=(2.0, 1.5, 1.2),
        mic_pos_m=(2.5, 1.5, 1.2),
        target_rt60_s=rt60_s,
        **kwargs,
    )


class TestRoomSpec:
    def test_geometry(self):
        room = paper_room(0.5)
        assert room.volume_m3 == pytest.approx(37.5)
        assert room.surface_area_m2 == pytest.approx(70.0)
        assert room.source_mic_distance_m == pytest.approx(0.5)

    def test_positions_must_be_inside(self):
        with pytest.raises(ValueError, match="inside"):
            RoomSpec((5, 3, 2.5), (5.0, 1.5, 1.2), (2.5, 1.5, 1.2), 0.5)

    def test_source_mic_must_differ(self):
        with pytest.raises(ValueError, match="differ"):
            RoomSpec((5, 3, 2.5), (2.0, 1.5, 1.2), (2.0, 1.5, 1.2), 0.5)

    def test_rt60_positive(self):
        with pytest.raises(ValueError):
            paper_room(0.0)

    def test_default_rir_length(self):
        assert paper_room(0.4).rir_length_s == pytest.approx(1.4 * 0.4)


class TestReflectionFromRt60:
    def test_round_trip(self):
        room = paper_room(0.5)
        beta = reflection_from_rt60(room)
        assert 0.0 < beta < 1.0
        assert eyring_rt60(room, beta) == pytest.approx(0.5, abs=1e-9)

    def test_hand_computed_inversion(self):
        # oracle: closed-form inversion evaluated independently here
        room = paper_room(0.9)
        sabine_k = 24.0 * math.log(10.0) / 343.0
        expected = math.exp(-0.5 * sabine_k * 37.5 / (70.0 * 0.9))
        assert reflection_from_rt60(room) == pytest.approx(expected, rel=1e-12)

    def test_monotone_in_target(self):
        betas = [reflection_from_rt60(paper_room(rt)) for rt in (0.3, 0.5, 0.7, 0.9)]
        assert all(b2 > b1 for b1, b2 in zip(betas, betas[1:]))

    def test_infeasible_target(self):
        with pytest.raises(InfeasibleRoomError):
            reflection_from_rt60(paper_room(1e-4))


class TestGenerateRir:
    def test_anechoic_single_direct_path(self):
        room = paper_room(0.5)
        rir = generate_rir(room, FS, reflection_coefficient=0.0)
        peak = direct_path_delay_samples(rir)
        expected = round(0.5 / 343.0 * FS)
        assert abs(peak - expected) <= 1
        energy = rir.taps**2
        window = energy[max(peak - 9, 0) : peak + 10].sum()
        assert window == pytest.approx(energy.sum(), rel=1e-12)

    def test_direct_path_delay(self):
        rir = generate_rir(paper_room(0.4), FS, seed=0)
        expected = round(0.5 / 343.0 * FS)
        assert abs(direct_path_delay_samples(rir) - expected) <= 1

    def test_length_covers_decay(self):
        room = paper_room(0.6)
        rir = generate_rir(room, FS, seed=0)
        assert rir.taps.size == math.ceil(room.rir_length_s * FS)
        assert rir.taps.size >= math.ceil(0.6 * FS)

    def test_schroeder_within_tolerance(self):
        # oracle implemented independently below (backward integration)
        for rt in (0.3, 0.6):
            rir = generate_rir(paper_room(rt), FS, seed=1)
            measured = measure_rt60_schroeder(rir)
            assert abs(measured - rt) / rt <= 0.20, (rt, measured)

    def test_deterministic(self):
        room = paper_room(0.4)
        a = generate_rir(room, FS, seed=9)
        b = generate_rir(room, FS, seed=9)
        assert np.array_equal(a.taps, b.taps)

    def test_jitter_consumes_seed(self):
        room = paper_room(0.3)
        a = generate_rir(room, FS, seed=1, image_jitter_m=0.02)
        b = generate_rir(room, FS, seed=2, image_jitter_m=0.02)
        assert not np.array_equal(a.taps, b.taps)

    def test_reflection_override_range(self):
        with pytest.raises(ValueError):
            generate_rir(paper_room(0.4), FS, reflection_coefficient=1.0)


class TestSchroederMeasurement:
    def make_exponential(self, rho, rt60_s):
        n = np.arange(int(1.25 * rt60_s * FS))
        return ImpulseResponse(np.exp(-rho * n / FS), FS)

    def test_unit_decay_rate_pair(self):
        # amplitude decay exp(-rho t) falls 60 dB of energy in 6.908/rho s
        rir = self.make_exponential(6.908, 1.0)
        assert measure_rt60_schroeder(rir) == pytest.approx(1.0, rel=0.02)

    def test_double_rate_halves_time(self):
        rir = self.make_exponential(13.816, 0.5)
        assert measure_rt60_schroeder(rir) == pytest.approx(0.5, rel=0.02)

    def test_noise_modulated_decay(self):
        rng = np.random.default_rng(5)
        n = np.arange(int(0.5 * FS))
        taps = np.exp(-13.816 * n / FS) * rng.standard_normal(n.size)
        rir = ImpulseResponse(taps, FS)
        assert measure_rt60_schroeder(rir) == pytest.approx(0.5, rel=0.1)

    def test_unmeasurable_when_no_decay_range(self):
        taps = np.zeros(100)
        taps[0] = 1.0
        with pytest.raises(UnmeasurableDecayError):
            measure_rt60_schroeder(ImpulseResponse(taps, FS))

    def test_rising_energy_unmeasurable(self):
        taps = np.linspace(0.01, 1.0, 400)
        with pytest.raises(UnmeasurableDecayError):
            measure_rt60_schroeder(ImpulseResponse(taps, FS))


class TestImpulseResponseType:
    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError, match="zero energy"):
            ImpulseResponse(np.zeros(10), FS)

    def test_too_short_for_meta_decay(self):
        with pytest.raises(ValueError, match="too short"):
            ImpulseResponse(np.ones(10), FS, meta=paper_room(0.5))
