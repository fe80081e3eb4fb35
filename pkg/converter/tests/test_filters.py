"""Zero-phase filtering and resampling properties."""

import numpy as np
import pytest

from eegconvert.filters import resample, zero_phase_bandpass, zero_phase_notch


class TestBandpass:
    def test_20hz_sinusoid_preserved(self):
        fs = 1000.0
        t = np.arange(int(4 * fs)) / fs
        x = np.sin(2 * np.pi * 20.0 * t)
        y = zero_phase_bandpass(x, 8.0, 30.0, fs)
        core = slice(500, -500)  # ignore the edge transients
        amp_in = np.abs(x[core]).max()
        amp_out = np.abs(y[core]).max()
        assert abs(amp_out - amp_in) / amp_in < 0.01
        # zero phase: cross-correlation peaks at zero lag
        lags = np.arange(-5, 6)
        corr = [np.dot(x[500:-500], np.roll(y, k)[500:-500]) for k in lags]
        assert lags[int(np.argmax(corr))] == 0

    def test_out_of_band_attenuated(self):
        fs = 1000.0
        t = np.arange(int(4 * fs)) / fs
        x = np.sin(2 * np.pi * 2.0 * t)
        y = zero_phase_bandpass(x, 8.0, 30.0, fs)
        assert np.abs(y[500:-500]).max() < 0.05

    def test_invalid_band_rejected(self):
        with pytest.raises(ValueError, match="band"):
            zero_phase_bandpass(np.zeros(100), 30.0, 8.0, 1000.0)
        with pytest.raises(ValueError, match="band"):
            zero_phase_bandpass(np.zeros(100), 8.0, 600.0, 1000.0)

    def test_multichannel_axis(self):
        fs = 500.0
        t = np.arange(int(2 * fs)) / fs
        x = np.stack([np.sin(2 * np.pi * 15.0 * t),
                      np.sin(2 * np.pi * 20.0 * t)])
        y = zero_phase_bandpass(x, 8.0, 30.0, fs)
        assert y.shape == x.shape


class TestNotch:
    def test_50hz_removed_neighbor_kept(self):
        fs = 250.0
        t = np.arange(int(8 * fs)) / fs
        hum = np.sin(2 * np.pi * 50.0 * t)
        tone = np.sin(2 * np.pi * 20.0 * t)
        y = zero_phase_notch(hum + tone, 50.0, fs)
        core = slice(250, -250)
        spec = np.fft.rfft(y[core])
        freqs = np.fft.rfftfreq(len(y[core]), 1 / fs)
        at = lambda f: np.abs(spec[np.argmin(np.abs(freqs - f))])
        assert at(50.0) < 0.05 * at(20.0)


class TestResample:
    @pytest.mark.parametrize("fs_in", [1000.0, 250.0])
    def test_duration_preserved(self, fs_in):
        seconds = 4.5
        x = np.random.default_rng(0).normal(size=int(seconds * fs_in))
        y = resample(x, fs_in, 400.0)
        assert len(y) == round(seconds * 400.0)

    def test_tone_survives_downsampling(self):
        fs = 1000.0
        t = np.arange(int(4 * fs)) / fs
        x = np.sin(2 * np.pi * 10.0 * t)
        y = resample(x, fs, 400.0)
        t2 = np.arange(len(y)) / 400.0
        ref = np.sin(2 * np.pi * 10.0 * t2)
        core = slice(200, -200)
        corr = np.corrcoef(y[core], ref[core])[0, 1]
        assert corr > 0.999
