import wave

import numpy as np
import pytest

from ejam.audio import AudioSignal, convolve, downsample, read_wav, write_wav
from ejam.errors import DataError
from ejam.room import ImpulseResponse


def sine(freq_hz, seconds=0.5, rate=16000, amp=0.8):
    t = np.arange(int(seconds * rate)) / rate
    return AudioSignal(amp * np.sin(2 * np.pi * freq_hz * t), rate)


class TestWavIO:
    def test_round_trip_within_quantization(self, tmp_path):
        signal = sine(1000.0)
        path = tmp_path / "s.wav"
        write_wav(path, signal)
        loaded = read_wav(path)
        assert loaded.sample_rate_hz == 16000
        assert np.max(np.abs(loaded.samples - signal.samples)) <= 2.0**-15

    def test_sample_rate_preserved(self, tmp_path):
        path = tmp_path / "s.wav"
        write_wav(path, AudioSignal(np.zeros(100) + 0.1, 16000))
        assert read_wav(path).sample_rate_hz == 16000

    def test_zero_length_refused(self, tmp_path):
        signal = sine(440.0)
        with pytest.raises(ValueError):
            AudioSignal(np.array([]), 16000)
        empty = AudioSignal(np.zeros(1), 16000)
        object.__setattr__(empty, "samples", np.array([]))
        with pytest.raises(DataError):
            write_wav(tmp_path / "empty.wav", empty)

    def test_rejects_stereo(self, tmp_path):
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(b"\x00\x00" * 200)
        with pytest.raises(DataError, match="mono"):
            read_wav(path)

    def test_rejects_8bit(self, tmp_path):
        path = tmp_path / "u8.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(1)
            w.setframerate(16000)
            w.writeframes(b"\x80" * 100)
        with pytest.raises(DataError, match="16-bit"):
            read_wav(path)


class TestConvolve:
    def test_unit_impulse_identity(self):
        signal = sine(500.0)
        rir = ImpulseResponse(np.array([1.0]), 16000)
        out = convolve(signal, rir)
        assert np.allclose(out.samples, signal.samples)

    def test_delayed_impulse_shifts(self):
        signal = sine(500.0)
        d = 37
        taps = np.zeros(d + 1)
        taps[d] = 1.0
        out = convolve(signal, ImpulseResponse(taps, 16000))
        assert np.allclose(out.samples[d:], signal.samples[:-d])
        assert np.allclose(out.samples[:d], 0.0)

    def test_sample_rate_mismatch(self):
        with pytest.raises(DataError, match="mismatch"):
            convolve(sine(500.0, rate=16000), ImpulseResponse(np.ones(4), 8000))

    def test_matches_naive_convolution(self):
        # oracle: direct O(N*M) convolution sum on the first samples
        rng = np.random.default_rng(3)
        x = rng.standard_normal(16000)
        h = rng.standard_normal(int(0.9 * 1.25 * 16000)) * np.exp(
            -np.arange(int(0.9 * 1.25 * 16000)) / 2000.0
        )
        out = convolve(AudioSignal(x, 16000), ImpulseResponse(h, 16000), normalize=False)
        direct = np.array(
            [sum(x[n - m] * h[m] for m in range(min(n + 1, h.size))) for n in range(100)]
        )
        np.testing.assert_allclose(out.samples[:100], direct, rtol=1e-9, atol=1e-12)

    def test_linearity_before_normalization(self):
        rng = np.random.default_rng(4)
        x = AudioSignal(rng.standard_normal(4000), 16000)
        y = AudioSignal(rng.standard_normal(4000), 16000)
        h = ImpulseResponse(rng.standard_normal(500), 16000)
        a, b = 0.7, -1.3
        combo = AudioSignal(a * x.samples + b * y.samples, 16000)
        lhs = convolve(combo, h, normalize=False).samples
        rhs = (
            a * convolve(x, h, normalize=False).samples
            + b * convolve(y, h, normalize=False).samples
        )
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)

    def test_truncates_to_input_length_and_peak(self):
        signal = sine(200.0, seconds=0.25)
        rir = ImpulseResponse(np.full(800, 0.9), 16000)
        out = convolve(signal, rir)
        assert out.samples.size == signal.samples.size
        assert np.max(np.abs(out.samples)) <= 1.0


class TestDownsample:
    def test_identity_at_same_rate(self):
        signal = sine(500.0)
        assert downsample(signal, 16000) is signal

    def test_output_length(self):
        for n in (16000, 16001, 15999, 1234):
            signal = AudioSignal(np.random.default_rng(n).standard_normal(n), 16000)
            out = downsample(signal, 2000)
            assert out.samples.size == int(np.ceil(n / 8)), n
            assert out.sample_rate_hz == 2000

    def test_stopband_attenuation(self):
        # tone above the target Nyquist must be suppressed >= 40 dB
        tone = sine(1300.0, seconds=1.0)
        out = downsample(tone, 2000)
        in_rms = np.sqrt(np.mean(tone.samples**2))
        out_rms = np.sqrt(np.mean(out.samples[100:-100] ** 2))
        assert 20 * np.log10(out_rms / in_rms) <= -40.0

    def test_passband_preserved(self):
        tone = sine(300.0, seconds=1.0)
        out = downsample(tone, 2000)
        in_rms = np.sqrt(np.mean(tone.samples**2))
        out_rms = np.sqrt(np.mean(out.samples[100:-100] ** 2))
        assert abs(20 * np.log10(out_rms / in_rms)) < 1.0

    def test_upsampling_refused(self):
        with pytest.raises(DataError):
            downsample(sine(500.0), 32000)
