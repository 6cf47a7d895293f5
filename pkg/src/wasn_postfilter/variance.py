"""Per-bin speech and noise variances for the estimator priors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .estimator import VARIANCE_FLOOR

__all__ = [
    "VarianceTrack",
    "smooth_power",
    "oracle_variances",
    "min_stats_noise",
    "blind_variances",
]


@dataclass(frozen=True)
class VarianceTrack:
    """Speech and noise variance per frame and bin, both shaped ``(T, K)``."""

    speech_var: np.ndarray
    noise_var: np.ndarray
    mode: str = "oracle"

    def __post_init__(self):
        if self.mode not in ("oracle", "blind"):
            raise ValueError(f"unknown variance mode {self.mode!r}")
        if np.shape(self.speech_var) != np.shape(self.noise_var):
            raise ValueError("speech and noise tracks differ in shape")


def smooth_power(frames, alpha: float = 0.7) -> np.ndarray:
    """First-order recursive average of squared coefficients along time.

    ``v[t] = alpha * v[t-1] + (1 - alpha) * c[t]**2`` with ``v[-1] = c[0]**2``.
    """
    power = np.square(np.atleast_2d(np.asarray(frames, dtype=np.float64)))
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    zi = alpha * power[:1]
    out, _ = lfilter([1 - alpha], [1, -alpha], power, axis=0, zi=zi)
    return out


def oracle_variances(clean_frames, noise_frames, alpha: float = 0.7) -> VarianceTrack:
    """Variances from separately available clean and noise coefficients."""
    clean = np.atleast_2d(clean_frames)
    noise = np.atleast_2d(noise_frames)
    if clean.shape != noise.shape:
        raise ValueError(
            f"frame sequences differ in shape: {clean.shape} vs {noise.shape}")
    return VarianceTrack(
        np.maximum(smooth_power(clean, alpha), VARIANCE_FLOOR),
        np.maximum(smooth_power(noise, alpha), VARIANCE_FLOOR),
        "oracle",
    )


def min_stats_noise(noisy_frames, window: int = 96, alpha: float = 0.95,
                    bias: float = 1.5) -> np.ndarray:
    """Noise variance from running minima of the smoothed periodogram.

    The minimum over the last ``window`` frames is scaled by a fixed ``bias``
    and then capped by the current smoothed power, so the estimate never
    exceeds the smoothed noisy periodogram.
    """
    if window < 10:
        raise ValueError("window must be at least 10 frames")
    smoothed = smooth_power(noisy_frames, alpha)
    padded = np.concatenate(
        [np.full((window - 1, smoothed.shape[1]), np.inf), smoothed])
    running_min = np.lib.stride_tricks.sliding_window_view(
        padded, window, axis=0).min(axis=-1)
    noise = np.minimum(bias * running_min, smoothed)
    return np.maximum(noise, VARIANCE_FLOOR)


def blind_variances(noisy_frames, window: int = 96, alpha: float = 0.7) -> VarianceTrack:
    """Noise by minimum statistics, speech as smoothed power minus noise."""
    noise = min_stats_noise(noisy_frames, window)
    speech = smooth_power(noisy_frames, alpha) - noise
    return VarianceTrack(np.maximum(speech, VARIANCE_FLOOR), noise, "blind")
