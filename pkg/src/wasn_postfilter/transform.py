"""Lapped transform front end and the perceptual-domain mapping.

Signals are cut into 50%-overlapping frames of ``2K`` samples, weighted by a
sine window and mapped to ``K`` real coefficients by an orthonormal MDCT.
A sequence of frames is represented as a ``(T, K)`` array whose row index is
the frame index.

Dividing a frame by a smooth, strictly positive spectral envelope gives the
perceptual-domain coefficients on which quantization and estimation operate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.ndimage import uniform_filter1d

__all__ = [
    "SignalBuffer",
    "TransformConfig",
    "EnvelopeConfig",
    "PerceptualFrames",
    "analyze",
    "synthesize",
    "estimate_envelope",
    "to_perceptual",
    "from_perceptual",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class SignalBuffer:
    """Mono PCM samples normalized to [-1, 1] with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("SignalBuffer holds mono samples only")
        if not np.all(np.isfinite(samples)):
            raise ValueError("invalid sample")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class TransformConfig:
    """Frame geometry: ``K`` coefficients per frame, frame length ``2K``, hop ``K``."""

    K: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.K < 2 or self.K & (self.K - 1):
            raise ValueError("K must be a power of two")

    @property
    def frame_length(self) -> int:
        return 2 * self.K

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.K


@dataclass(frozen=True)
class EnvelopeConfig:
    """Smoothing window (bins) and floors of the spectral envelope."""

    window: int = 9
    rel_floor: float = 1e-4
    abs_floor: float = 1e-8


@dataclass(frozen=True)
class PerceptualFrames:
    """Perceptual coefficients together with the envelope that produced them.

    Both arrays have shape ``(T, K)``; ``coeffs * envelope`` gives back the
    transform coefficients.
    """

    coeffs: np.ndarray
    envelope: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        envelope = np.asarray(self.envelope, dtype=np.float64)
        if coeffs.shape != envelope.shape:
            raise ValueError("coeffs and envelope shapes differ")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "envelope", envelope)

    @property
    def n_frames(self) -> int:
        return self.coeffs.shape[0] if self.coeffs.ndim == 2 else 1

    @property
    def K(self) -> int:
        return self.coeffs.shape[-1]


@lru_cache(maxsize=8)
def _basis(K: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(2 * K)
    k = np.arange(K)
    window = np.sin(np.pi * (n + 0.5) / (2 * K))
    basis = np.sqrt(2.0 / K) * np.cos(
        np.pi / K * np.outer(k + 0.5, n + 0.5 + K / 2)
    )
    window.setflags(write=False)
    basis.setflags(write=False)
    return window, basis


def _as_samples(signal) -> np.ndarray:
    if isinstance(signal, SignalBuffer):
        return signal.samples
    samples = np.asarray(signal, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected a mono signal")
    if not np.all(np.isfinite(samples)):
        raise ValueError("invalid sample")
    return samples


def analyze(signal, config: TransformConfig = TransformConfig()) -> np.ndarray:
    """MDCT analysis of a mono signal.

    The signal is zero-padded by one hop at the front and by one hop plus
    whatever completes the last hop at the back, so every input sample is
    covered by two frames.

    Parameters
    ----------
    signal : SignalBuffer or array_like
        Mono samples.
    config : TransformConfig
        Frame geometry.

    Returns
    -------
    ndarray, shape (T, K)
        One row of coefficients per frame.
    """
    x = _as_samples(signal)
    if x.size == 0:
        raise ValueError("empty input")
    K = config.K
    window, basis = _basis(K)
    tail = K + (-x.size) % K
    padded = np.concatenate([np.zeros(K), x, np.zeros(tail)])
    n_frames = padded.size // K - 1
    frames = np.lib.stride_tricks.sliding_window_view(padded, 2 * K)[::K]
    assert frames.shape[0] == n_frames
    return (frames * window) @ basis.T


def synthesize(frames, config: TransformConfig = TransformConfig(),
               length: int | None = None) -> SignalBuffer:
    """Overlap-add inverse of :func:`analyze`.

    ``length`` strips the padding added by :func:`analyze`; without it the
    output covers every hop spanned by the frames minus the leading pad.
    """
    coeffs = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    K = config.K
    if coeffs.shape[-1] != K:
        raise ValueError(
            f"inconsistent frame length: got {coeffs.shape[-1]}, expected {K}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("non-finite coefficient")
    window, basis = _basis(K)
    n_frames = coeffs.shape[0]
    blocks = (coeffs @ basis) * window
    out = np.zeros((n_frames + 1) * K)
    out[: n_frames * K] += blocks[:, :K].reshape(-1)
    out[K:] += blocks[:, K:].reshape(-1)
    out = out[K:]
    if length is not None:
        if length > out.size:
            raise ValueError("requested length exceeds frame support")
        out = out[:length]
    return SignalBuffer(out, config.sample_rate)


def estimate_envelope(frames, config: EnvelopeConfig = EnvelopeConfig()) -> np.ndarray:
    """Smooth positive spectral envelope of each frame.

    Magnitudes are averaged over ``config.window`` neighbouring bins in the dB
    domain (a running geometric mean) and floored at
    ``max(rel_floor * frame RMS, abs_floor)``.  Works on a single frame or on
    a ``(T, K)`` stack.
    """
    c = np.asarray(frames, dtype=np.float64)
    rms = np.sqrt(np.mean(c**2, axis=-1, keepdims=True))
    floor = np.maximum(config.rel_floor * rms, config.abs_floor)
    mag = np.maximum(np.abs(c), floor)
    level = uniform_filter1d(np.log(mag), size=config.window, axis=-1,
                             mode="nearest")
    return np.maximum(np.exp(level), floor)


def to_perceptual(frames, envelope) -> PerceptualFrames:
    envelope = np.asarray(envelope, dtype=np.float64)
    if np.any(envelope <= 0):
        raise ValueError("envelope must be strictly positive")
    return PerceptualFrames(np.asarray(frames, dtype=np.float64) / envelope,
                            envelope)


def from_perceptual(pf: PerceptualFrames) -> np.ndarray:
    return pf.coeffs * pf.envelope


def read_wav(path) -> SignalBuffer:
    """Read a mono 16-bit, 32-bit integer or float WAV file."""
    rate, data = wavfile.read(Path(path))
    if data.ndim != 1:
        raise ValueError(
            f"{path}: {data.shape[1]}-channel file; split channels into mono "
            "files first")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return SignalBuffer(samples, rate)


def write_wav(path, signal: SignalBuffer, fmt: str = "float32"):
    """Write a mono WAV file as ``"float32"`` or ``"pcm16"``."""
    if fmt == "float32":
        data = signal.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(signal.samples, -1.0, 32767 / 32768) * 32768)
        data = data.astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(Path(path), signal.sample_rate, data)
