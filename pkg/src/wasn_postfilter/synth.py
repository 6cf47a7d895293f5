"""Deterministic speech-like test signals.

A source-filter toy: voiced syllables are glottal pulse trains with a
drifting pitch contour shaped by a cascade of formant resonators, unvoiced
segments are high-passed noise bursts, and syllables are separated by short
gaps and longer pauses.  Babble is a sum of independent talkers.  None of
this is meant to sound natural; it gives clips with speech-like spectral
envelopes, harmonic structure and on/off activity for experiments when no
speech corpus is at hand.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .transform import SignalBuffer

__all__ = ["speech_like", "babble"]

# (F1, F2, F3) targets, Hz, roughly spanning the vowel space
_VOWELS = np.array([
    (730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480),
    (660, 1720, 2410), (490, 1350, 1690), (640, 1190, 2390), (570, 840, 2410),
])
_BANDWIDTHS = (80.0, 110.0, 160.0)


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [sum(a)], a  # unit gain at DC


def _voiced(n, fs, f0_range, rng):
    f_start, f_end = rng.uniform(*f0_range, size=2)
    f0 = np.linspace(f_start, f_end, n) * (1 + 0.01 * rng.standard_normal(n).cumsum() / np.sqrt(n))
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    # glottal flow derivative approximated by a leaky integrated pulse train
    source = lfilter([1.0, -1.0], [1.0, -0.97], pulses)
    vowel = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.15)
    out = source
    for freq, bw in zip(vowel, _BANDWIDTHS):
        b, a = _resonator(min(freq, 0.45 * fs), bw, fs)
        out = lfilter(b, a, out)
    out = lfilter([1.0, -0.9], [1.0], out)  # lip radiation
    return out + 0.02 * np.std(out) * rng.standard_normal(n)


def _unvoiced(n, fs, rng):
    cutoff = rng.uniform(2500, 4500) * min(1.0, fs / 16000)
    sos = butter(4, cutoff, "highpass", fs=fs, output="sos")
    return sosfilt(sos, rng.standard_normal(n))


def _envelope(n):
    ramp = max(2, n // 6)
    env = np.ones(n)
    shape = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
    env[:ramp] = shape
    env[-ramp:] = shape[::-1]
    return env


def speech_like(duration: float, sample_rate: int = 16000, seed=0,
                f0_range=(90.0, 160.0), level_db: float = -26.0) -> SignalBuffer:
    """Speech-like clip of ``duration`` seconds at RMS ``level_db`` dBFS.

    ``f0_range`` sets the pitch range (use e.g. ``(170, 260)`` for a higher
    voice).  The same ``seed`` always yields the same samples.
    """
    rng = np.random.default_rng(seed)
    fs = sample_rate
    total = int(round(duration * fs))
    out = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.15) * fs)
    while pos < total:
        if rng.random() < 0.25:
            n = int(rng.uniform(0.05, 0.14) * fs)
            seg = 0.4 * _unvoiced(n, fs, rng)
        else:
            n = int(rng.uniform(0.12, 0.30) * fs)
            seg = _voiced(n, fs, f0_range, rng)
        seg = seg / (np.std(seg) + 1e-12) * 10 ** rng.uniform(-0.4, 0.1)
        end = min(total, pos + n)
        out[pos:end] += (seg * _envelope(n))[: end - pos]
        gap = 0.45 if rng.random() < 0.15 else 0.06
        pos = end + int(rng.uniform(0.5, 1.5) * gap * fs)
    rms = np.sqrt(np.mean(out**2))
    out *= 10 ** (level_db / 20) / rms
    return SignalBuffer(out, fs)


def babble(duration: float, sample_rate: int = 16000, seed=0, talkers: int = 6,
           level_db: float = -26.0) -> SignalBuffer:
    """Sum of ``talkers`` independent speech-like streams."""
    rng = np.random.default_rng(seed)
    mix = np.zeros(int(round(duration * sample_rate)))
    for i in range(talkers):
        f0 = (170.0, 260.0) if i % 2 else (90.0, 160.0)
        talker = speech_like(duration, sample_rate, rng.integers(2**32), f0)
        mix += talker.samples
    mix *= 10 ** (level_db / 20) / np.sqrt(np.mean(mix**2))
    return SignalBuffer(mix, sample_rate)
