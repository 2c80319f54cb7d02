import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pitmix.features import (FeatureConfig, FeatureSequence, MixSpec, Waveform, cmvn,
                             energy_snr_db, logfbank, mel_centers, mel_filterbank, mix_at_snr,
                             pad_to_length)

CFG = FeatureConfig()


def _noise(seed, n=1600, scale=0.1):
    return Waveform(np.random.default_rng(seed).standard_normal(n) * scale)


class TestTypes:
    def test_waveform_rejects_empty_and_nan(self):
        with pytest.raises(ValueError):
            Waveform(np.array([]))
        with pytest.raises(ValueError):
            Waveform(np.array([0.0, np.nan]))

    def test_mixspec_invariants(self):
        with pytest.raises(ValueError):
            MixSpec(0.0, num_sources=1)
        with pytest.raises(ValueError):
            MixSpec(0.0, pad_noise_amplitude=-1.0)

    def test_feature_sequence_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            FeatureSequence(np.array([[np.inf]]))


class TestMixing:
    def test_equal_energy_zero_db_gives_unit_gain(self):
        a = Waveform(np.array([1.0, -1.0, 1.0, -1.0]))
        b = Waveform(np.array([-1.0, 1.0, 1.0, -1.0]))
        _, gains = mix_at_snr(a, [b], MixSpec(0.0))
        assert gains == pytest.approx([1.0], abs=1e-15)

    def test_four_times_energy_gives_half_gain(self):
        a = _noise(0)
        b = Waveform(a.samples[::-1] * 2.0)
        _, gains = mix_at_snr(a, [b], MixSpec(0.0))
        assert gains[0] == pytest.approx(0.5, rel=1e-12)

    def test_twenty_db_equal_energy(self):
        a = _noise(1)
        b = Waveform(a.samples[::-1].copy())
        _, gains = mix_at_snr(a, [b], MixSpec(20.0))
        assert gains[0] == pytest.approx(0.1, rel=1e-12)

    def test_mixture_is_sum_of_scaled_sources(self):
        a, b, c = _noise(2), _noise(3), _noise(4)
        mixed, g = mix_at_snr(a, [b, c], MixSpec(5.0, num_sources=3))
        expected = a.samples + g[0] * b.samples + g[1] * c.samples
        np.testing.assert_array_equal(mixed.samples, expected)

    def test_rejects_length_mismatch_and_silence(self):
        with pytest.raises(ValueError):
            mix_at_snr(_noise(0, 100), [_noise(1, 101)], MixSpec(0.0))
        with pytest.raises(ValueError):
            mix_at_snr(_noise(0, 100), [Waveform(np.zeros(100))], MixSpec(0.0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-20, 20))
    def test_snr_round_trip(self, seed, snr):
        rng = np.random.default_rng(seed)
        a = Waveform(rng.standard_normal(257) * rng.uniform(0.01, 1))
        b = Waveform(rng.standard_normal(257) * rng.uniform(0.01, 1))
        _, g = mix_at_snr(a, [b], MixSpec(snr))
        assert abs(energy_snr_db(a.samples, g[0] * b.samples) - snr) < 1e-6


class TestPadding:
    def test_no_deficit_is_identity(self):
        w = _noise(0, 50)
        np.testing.assert_array_equal(pad_to_length(w, 50, 1e-4, 0).samples, w.samples)

    def test_odd_deficit_is_front_biased(self):
        w = Waveform(np.ones(10))
        out = pad_to_length(w, 15, 0.0, 0).samples
        np.testing.assert_array_equal(out, np.r_[np.zeros(3), np.ones(10), np.zeros(2)])

    def test_zero_amplitude_even_deficit(self):
        out = pad_to_length(Waveform(np.ones(3)), 7, 0.0, 1).samples
        np.testing.assert_array_equal(out, [0, 0, 1, 1, 1, 0, 0])

    def test_noise_bounded_seeded_and_middle_preserved(self):
        w = _noise(5, 40)
        a = pad_to_length(w, 61, 1e-4, 7).samples
        b = pad_to_length(w, 61, 1e-4, 7).samples
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a[11:51], w.samples)
        pad = np.r_[a[:11], a[51:]]
        assert np.all(np.abs(pad) <= 1e-4) and np.any(pad != 0)

    def test_shorter_target_rejected(self):
        with pytest.raises(ValueError):
            pad_to_length(_noise(0, 10), 9, 0.0, 0)


class TestLogfbank:
    def test_frame_count_and_dim(self):
        w = _noise(0, 16000)
        f = logfbank(w, CFG)
        assert f.frames.shape == (1 + (16000 - 400) // 160, CFG.n_mels)

    def test_silence_hits_floor(self):
        f = logfbank(Waveform(np.zeros(800)), CFG)
        np.testing.assert_array_equal(f.frames, np.log(CFG.floor))

    def test_doubling_amplitude_adds_log4(self):
        w = _noise(1, 3200)
        a = logfbank(w, CFG).frames
        b = logfbank(Waveform(2 * w.samples), CFG).frames
        np.testing.assert_allclose(b - a, np.log(4.0), atol=1e-9)

    @pytest.mark.parametrize("k", [3, 7, 11])
    def test_tone_at_filter_center_dominates_neighbours(self, k):
        centers = mel_centers(CFG)
        # snap to the nearest FFT bin so the analytic peak sits on the filter apex
        bin_hz = CFG.sample_rate / CFG.fft_size
        f0 = round(centers[k] / bin_hz) * bin_hz
        t = np.arange(4000) / CFG.sample_rate
        frames = logfbank(Waveform(0.5 * np.sin(2 * np.pi * f0 * t)), CFG).frames
        assert np.all(frames[:, k] > frames[:, k - 1])
        assert np.all(frames[:, k] > frames[:, k + 1])

    def test_filterbank_shape_and_nonnegative(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (CFG.n_mels, CFG.fft_size // 2 + 1)
        assert np.all(fb >= 0) and np.all(fb.sum(axis=1) > 0)

    def test_deterministic(self):
        w = _noise(3, 2000)
        np.testing.assert_array_equal(logfbank(w, CFG).frames, logfbank(w, CFG).frames)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            logfbank(Waveform(np.ones(399)), CFG)


class TestCmvn:
    def test_two_point(self):
        out = cmvn(FeatureSequence(np.array([[0.0], [2.0]])))
        np.testing.assert_allclose(out.frames, [[-1.0], [1.0]])
        assert out.normalized

    def test_constant_dimension_goes_to_zero(self):
        x = np.c_[np.full(5, 3.0), np.arange(5.0)]
        out = cmvn(FeatureSequence(x)).frames
        np.testing.assert_array_equal(out[:, 0], 0.0)

    def test_idempotent(self):
        x = np.random.default_rng(0).standard_normal((20, 4)) * 3 + 1
        once = cmvn(FeatureSequence(x))
        np.testing.assert_allclose(cmvn(once).frames, once.frames, atol=1e-9)

    def test_single_frame_rejected(self):
        with pytest.raises(ValueError):
            cmvn(FeatureSequence(np.zeros((1, 3))))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_moments(self, T, D, seed):
        x = np.random.default_rng(seed).standard_normal((T, D)) * 5 - 2
        out = cmvn(FeatureSequence(x)).frames
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)
