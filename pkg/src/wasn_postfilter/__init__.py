"""Bayesian postfilter for speech captured by several quantizing devices.

Each device codes its signal in a perceptual domain (lapped-transform
coefficients divided by a spectral envelope) with a uniform scalar
quantizer.  The decoder knows, per coefficient, only the quantization bin
each device reported.  Combining a Gaussian speech prior with the
truncated-Gaussian likelihood of every bin gives a joint posterior whose
mean is computed by numerical integration.

Modules
-------
transform   lapped transform, envelope, perceptual domain, WAV I/O
quantcodec  bit allocation, quantizer, frame and stream serialization
estimator   truncated likelihood and posterior-mean estimation
variance    oracle and blind (minimum statistics) variance tracks
baselines   single-device posterior estimate and diagonal Wiener fusion
metrics     perceptual SNR, score rows, aggregation
harness     two-device experiment grid
synth       deterministic speech-like and babble test signals
"""

from .estimator import (ChannelObservation, PosteriorEstimate, PriorParams,
                        enhance_frame, mmse_batch, mmse_estimate,
                        truncated_likelihood)
from .quantcodec import BinLimits, QuantizedFrame, RateConfig, decode, encode
from .transform import (PerceptualFrames, SignalBuffer, TransformConfig,
                        analyze, estimate_envelope, synthesize)

__version__ = "0.1.0"

__all__ = [
    "ChannelObservation",
    "PosteriorEstimate",
    "PriorParams",
    "enhance_frame",
    "mmse_batch",
    "mmse_estimate",
    "truncated_likelihood",
    "BinLimits",
    "QuantizedFrame",
    "RateConfig",
    "decode",
    "encode",
    "PerceptualFrames",
    "SignalBuffer",
    "TransformConfig",
    "analyze",
    "estimate_envelope",
    "synthesize",
]
