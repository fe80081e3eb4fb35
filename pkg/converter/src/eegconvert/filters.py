"""Zero-phase filtering and polyphase resampling."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy import signal


def zero_phase_bandpass(x, low, high, fs, order=4):
    """4th-order Butterworth bandpass applied forward-backward along the
    last axis, so passband components keep their phase."""
    nyq = fs / 2.0
    if not 0 < low < high < nyq:
        raise ValueError(f"band ({low}, {high}) must satisfy "
                         f"0 < low < high < {nyq}")
    sos = signal.butter(order, [low / nyq, high / nyq], btype="band",
                        output="sos")
    return signal.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


def zero_phase_notch(x, freq, fs, quality=30.0):
    """IIR notch applied forward-backward along the last axis."""
    if not 0 < freq < fs / 2.0:
        raise ValueError(f"notch frequency {freq} outside (0, {fs / 2})")
    b, a = signal.iirnotch(freq, quality, fs=fs)
    return signal.filtfilt(b, a, np.asarray(x, dtype=np.float64), axis=-1)


def resample(x, fs_in, fs_out):
    """Polyphase resampling along the last axis using the exact rational
    ratio fs_out/fs_in (2/5 for 1000 to 400, 8/5 for 250 to 400)."""
    ratio = Fraction(fs_out).limit_denominator() / \
        Fraction(fs_in).limit_denominator()
    return signal.resample_poly(np.asarray(x, dtype=np.float64),
                                ratio.numerator, ratio.denominator, axis=-1)
