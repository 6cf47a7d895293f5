"""Reference systems: single-device posterior estimates and a diagonal MWF."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .estimator import enhance_frame
from .quantcodec import BinLimits
from .transform import PerceptualFrames

__all__ = ["single_channel_baseline", "mwf_diagonal"]


def single_channel_baseline(channel: tuple[PerceptualFrames, BinLimits],
                            noise_var, speech_var, grid_n: int = 200, **kwargs):
    """Posterior-mean estimate from one device alone."""
    return enhance_frame([channel], [noise_var], speech_var, grid_n=grid_n,
                         **kwargs)


def mwf_diagonal(channels: Sequence[PerceptualFrames], speech_var,
                 noise_vars: Sequence, steps: Sequence | None = None,
                 envelope=None) -> PerceptualFrames:
    """Linear MMSE fusion assuming independent noise in every channel.

    Each channel contributes ``y_i / v_i`` with
    ``v_i = noise_var_i + step_i**2 / 12``; the estimate is
    ``sum_i y_i / v_i / (1 / speech_var + sum_i 1 / v_i)``.

    Parameters
    ----------
    channels : sequence of PerceptualFrames
        Decoded (or unquantized) coefficients of each device.
    speech_var : array_like
        Speech variance per bin in the output domain.
    noise_vars : sequence of array_like
        Background noise variance per channel, in that channel's domain.
    steps : sequence of array_like, optional
        Quantizer step per channel and bin (``inf`` marks an untransmitted
        bin, which then gets zero weight).  ``None`` treats the channels as
        unquantized.
    envelope : array_like, optional
        Output-domain envelope; defaults to the first channel's.
    """
    if len(channels) == 0:
        raise ValueError("at least one channel is required")
    if len(noise_vars) != len(channels):
        raise ValueError("one noise variance array per channel is required")
    if steps is None:
        steps = [0.0] * len(channels)
    speech_var = np.asarray(speech_var, dtype=np.float64)
    if np.any(speech_var <= 0) or any(np.any(np.asarray(v) <= 0) for v in noise_vars):
        raise ValueError("variances must be positive")
    env_out = channels[0].envelope if envelope is None else np.asarray(envelope)

    numerator = 0.0
    precision = 1.0 / speech_var
    for pf, nv, step in zip(channels, noise_vars, steps):
        scale = pf.envelope / env_out
        var = (np.asarray(nv) + np.square(step) / 12.0) * scale**2
        numerator = numerator + pf.coeffs * scale / var
        precision = precision + 1.0 / var
    value = numerator / precision
    return PerceptualFrames(value, np.broadcast_to(env_out, np.shape(value)))
