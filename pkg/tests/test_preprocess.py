import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvrm.preprocess import (
    EventError,
    RawRecording,
    apply_filter,
    baseline_correct,
    baseline_samples,
    design_fir_bandpass,
    epoch_trials,
    preprocess,
)


class TestFilterDesign:
    def test_default_gains(self):
        fir = design_fir_bandpass()
        assert fir.num_taps == 129
        assert fir.gain(0.0)[0] <= 0.05
        assert 0.95 <= fir.gain(32.0)[0] <= 1.05

    def test_passband_flat(self):
        fir = design_fir_bandpass()
        g = fir.gain(np.linspace(4.0, 58.0, 60))
        assert np.all(np.abs(g - 1.0) < 0.05)

    def test_taps_symmetric(self):
        taps = design_fir_bandpass().taps
        np.testing.assert_array_equal(taps, taps[::-1])

    def test_response_matches_fft(self):
        fir = design_fir_bandpass()
        spec = np.fft.rfft(fir.taps, n=1024)
        f = np.fft.rfftfreq(1024, d=1.0 / fir.sample_rate_hz)
        np.testing.assert_allclose(fir.gain(f[:50]), np.abs(spec[:50]), atol=1e-12)

    @pytest.mark.parametrize(
        "kw",
        [dict(low_hz=0.0), dict(low_hz=10.0, high_hz=5.0), dict(high_hz=70.0), dict(num_taps=128), dict(num_taps=1)],
    )
    def test_invalid_designs(self, kw):
        with pytest.raises(ValueError):
            design_fir_bandpass(**kw)


class TestApplyFilter:
    def test_impulse_response_is_taps(self):
        fir = design_fir_bandpass()
        x = np.zeros((1, 400))
        x[0, 200] = 1.0
        out = apply_filter(fir, RawRecording(x)).samples[0]
        d = fir.group_delay
        np.testing.assert_allclose(out[200 - d : 200 + d + 1], fir.taps[::-1], atol=1e-15)

    def test_constant_removed_in_interior(self):
        fir = design_fir_bandpass()
        x = np.full((2, 600), 7.0)
        out = apply_filter(fir, RawRecording(x)).samples
        d = fir.group_delay
        assert np.max(np.abs(out[:, d:-d])) < 0.05 * 7.0

    def test_passband_sine_preserved(self):
        fir = design_fir_bandpass()
        t = np.arange(1024) / 128.0
        x = np.sin(2 * np.pi * 20.0 * t)[None]
        out = apply_filter(fir, RawRecording(x)).samples[0]
        d = fir.group_delay
        np.testing.assert_allclose(out[d:-d], x[0, d:-d], atol=0.05)

    def test_length_preserved(self):
        out = apply_filter(design_fir_bandpass(), RawRecording(np.ones((3, 77))))
        assert out.samples.shape == (3, 77)

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            apply_filter(design_fir_bandpass(), RawRecording(np.ones((1, 10)), sample_rate_hz=256.0))


def _recording(n_events=3, channels=4, b=128, trial_len=235, seed=0, offset=3.0):
    rng = np.random.default_rng(seed)
    width = b + trial_len
    x = rng.normal(size=(channels, width * n_events)) + offset
    onsets = b + width * np.arange(n_events)
    return RawRecording(x, 128.0, onsets, np.arange(n_events))


class TestBaseline:
    def test_baseline_samples(self):
        assert baseline_samples(1000.0, 128.0) == 128

    def test_baseline_windows_zero_mean(self):
        rec = _recording()
        out = baseline_correct(rec)
        for onset in rec.event_onsets:
            assert np.max(np.abs(out.samples[:, onset - 128 : onset].mean(axis=1))) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.floats(-100, 100), st.integers(0, 2**31))
    def test_offset_invariance(self, n, offset, seed):
        a = baseline_correct(_recording(n_events=n, seed=seed, offset=0.0)).samples
        b = baseline_correct(_recording(n_events=n, seed=seed, offset=offset)).samples
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_missing_baseline_raises(self):
        rec = RawRecording(np.zeros((1, 500)), 128.0, [50])
        with pytest.raises(EventError) as info:
            baseline_correct(rec)
        assert info.value.event == 0

    def test_overlapping_baseline_raises(self):
        rec = RawRecording(np.zeros((1, 1000)), 128.0, [200, 250])
        with pytest.raises(EventError) as info:
            baseline_correct(rec)
        assert info.value.event == 1


class TestEpoching:
    def test_shape(self):
        epochs = epoch_trials(_recording(), 235, 100)
        assert len(epochs) == 3
        assert all(e.data.shape == (4, 135) for e in epochs)
        assert [e.label for e in epochs] == [0, 1, 2]

    def test_window_contents(self):
        rec = _recording(n_events=1)
        (e,) = epoch_trials(rec, 235, 100)
        np.testing.assert_array_equal(e.data, rec.samples[:, 128 + 100 : 128 + 235])

    def test_runs_past_end(self):
        rec = RawRecording(np.zeros((1, 300)), 128.0, [200])
        with pytest.raises(EventError):
            epoch_trials(rec, 235, 100)

    @pytest.mark.parametrize("trial_len,discard", [(100, 100), (50, 60), (235, -1)])
    def test_bad_window(self, trial_len, discard):
        with pytest.raises(ValueError):
            epoch_trials(_recording(), trial_len, discard)

    def test_full_pipeline_shape(self):
        rec = _recording(n_events=4, channels=32)
        epochs = preprocess(rec)
        assert [e.data.shape for e in epochs] == [(32, 135)] * 4


class TestRecordingValidation:
    def test_non_increasing_onsets(self):
        with pytest.raises(ValueError):
            RawRecording(np.zeros((1, 100)), 128.0, [10, 10])

    def test_onset_out_of_range(self):
        with pytest.raises(ValueError):
            RawRecording(np.zeros((1, 100)), 128.0, [100])

    def test_wrong_ndim(self):
        with pytest.raises(ValueError):
            RawRecording(np.zeros(100))
