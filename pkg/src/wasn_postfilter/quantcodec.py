"""Uniform midtread scalar codec for perceptual frames.

Every frame carries one side-info value, its perceptual RMS ``sigma`` rounded
to half precision.  With ``b`` bits a bin is quantized with step
``8 * sigma / 2**b`` and indices in ``[-2**(b-1), 2**(b-1)]``, so the outermost
reconstruction levels sit at ``+-4 sigma``.  The decoder recovers, for every
transmitted bin, the exact interval of values that maps to the received
index.  The two outermost intervals are closed at ``+-sqrt(K) * sigma``
(slightly widened for the half-precision rounding of ``sigma``), the largest
magnitude any coefficient of a frame with RMS ``sigma`` can have.

Bins with zero bits are not transmitted.  They decode to zero with the
interval ``[-sqrt(K) sigma, sqrt(K) sigma]``.

Serialized frame layout (little endian)::

    offset  size    field
    0       4       magic b"QPF1"
    4       2       K, uint16
    6       4       frame index, uint32
    10      8       step scale 8*sigma, float64 (bin step = scale / 2**bits)
    18      8       dither seed, int64 (-1 when undithered)
    26      K       bits per bin, uint8
    26+K    2K      indices, int16
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LOADING",
    "STEP_FLOOR",
    "MAX_BITS",
    "RateConfig",
    "QuantizedFrame",
    "BinLimits",
    "allocate_bits",
    "choose_step",
    "side_info_sigma",
    "quantize",
    "dequantize",
    "dither_offsets",
    "encode_frame",
    "encode",
    "decode",
    "decode_frames",
    "serialize",
    "deserialize",
    "write_stream",
    "read_stream",
]

LOADING = 4.0  # quantizer covers +-LOADING * sigma
STEP_FLOOR = 1e-6
MAX_BITS = 15  # indices are stored as int16
# relative margin on sqrt(K) * sigma covering the float16 rounding of sigma
SIGMA_MARGIN = 2.0**-10

_FRAME_MAGIC = b"QPF1"
_FRAME_HEADER = struct.Struct("<4sHIdq")
_STREAM_MAGIC = b"QPS1"
_STREAM_HEADER = struct.Struct("<4sHIIQ")


@dataclass(frozen=True)
class RateConfig:
    """Total bitrate shared between device A (``split``) and device B."""

    total_bitrate: float
    split: float = 0.25
    frame_rate: float = 62.5
    K: int = 256

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.total_bitrate <= 0 or self.frame_rate <= 0:
            raise ValueError("bitrate and frame rate must be positive")

    @property
    def bitrate_a(self) -> float:
        return self.split * self.total_bitrate

    @property
    def bitrate_b(self) -> float:
        return (1 - self.split) * self.total_bitrate

    def bits_a(self) -> np.ndarray:
        return allocate_bits(self.bitrate_a, self.frame_rate, self.K)

    def bits_b(self) -> np.ndarray:
        return allocate_bits(self.bitrate_b, self.frame_rate, self.K)

    def bits_full(self) -> np.ndarray:
        return allocate_bits(self.total_bitrate, self.frame_rate, self.K)


def allocate_bits(bitrate: float, frame_rate: float, K: int) -> np.ndarray:
    """Uniform allocation; leftover bits go one each to the lowest bins."""
    per_frame = int(np.floor(bitrate / frame_rate + 1e-9))
    base, leftover = divmod(per_frame, K)
    bits = np.full(K, base, dtype=np.int64)
    bits[:leftover] += 1
    return bits


def choose_step(pf_variance, bits_per_coeff):
    """Quantizer step ``2 * LOADING * sigma / 2**b``, floored for silent frames."""
    variance = np.asarray(pf_variance, dtype=np.float64)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    step = 2 * LOADING * np.sqrt(variance) / np.exp2(bits_per_coeff)
    step = np.where(variance > 0, step, STEP_FLOOR)
    return step.item() if step.ndim == 0 else step


def side_info_sigma(coeffs) -> float:
    """Frame RMS as transmitted: rounded to half precision."""
    rms = np.sqrt(np.mean(np.square(coeffs)))
    with np.errstate(over="ignore"):
        sigma = np.float16(rms)
    if not np.isfinite(sigma):
        raise ValueError(f"frame RMS {rms:g} exceeds the side-info range")
    return float(sigma)


def _max_index(bits):
    bits = np.asarray(bits)
    return np.where(bits > 0, np.left_shift(1, np.maximum(bits, 1) - 1), 0)


def _outer_limit(sigma, K):
    # |y_k| <= sqrt(sum y**2) = sqrt(K) * rms for every bin of the frame
    return np.sqrt(K) * max(sigma, STEP_FLOOR) * (1 + SIGMA_MARGIN)


def quantize(values, step, max_index=None, dither=0.0):
    """Midtread indices ``floor((y - d) / step + 1/2)``, optionally clamped."""
    q = np.floor((np.asarray(values) - dither) / step + 0.5)
    if max_index is not None:
        q = np.clip(q, -max_index, max_index)
    return q.astype(np.int64)


def dequantize(indices, step, max_index=None, dither=0.0, outer=np.inf):
    """Reconstruction levels and bin limits of midtread indices.

    Returns ``(reconstruction, lower, upper)``.  Indices at ``+-max_index``
    get their outer limit replaced by ``+-outer``.
    """
    q = np.asarray(indices, dtype=np.float64)
    recon = q * step + dither
    lower = (q - 0.5) * step + dither
    upper = (q + 0.5) * step + dither
    if max_index is not None:
        lower = np.where(q <= -max_index, -outer, lower)
        upper = np.where(q >= max_index, outer, upper)
    return recon, lower, upper


def dither_offsets(seed: int, frame_index: int, step) -> np.ndarray:
    """Subtractive dither, uniform on ``(-step/2, step/2]``, one per bin."""
    step = np.asarray(step, dtype=np.float64)
    rng = np.random.default_rng([int(seed), int(frame_index)])
    return (0.5 - rng.random(step.shape)) * step


@dataclass(frozen=True)
class BinLimits:
    """Interval ``[lower, upper]`` known to contain each noisy coefficient."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lower) >= np.asarray(self.upper)):
            raise ValueError("bin limits must satisfy lower < upper")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class QuantizedFrame:
    indices: np.ndarray
    sigma: float
    bits: np.ndarray
    dither_seed: int | None = None
    frame_index: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        bits = np.asarray(self.bits, dtype=np.int64)
        if indices.shape != bits.shape or indices.ndim != 1:
            raise ValueError("indices and bits must be equal-length vectors")
        if np.any(bits < 0) or np.any(bits > MAX_BITS):
            raise ValueError(f"bits per bin must lie in [0, {MAX_BITS}]")
        if self.sigma < 0 or not np.isfinite(self.sigma):
            raise ValueError("sigma must be finite and non-negative")
        if self.dither_seed is not None and self.dither_seed < 0:
            raise ValueError("dither seed must be non-negative")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, QuantizedFrame):
            return NotImplemented
        return (np.array_equal(self.indices, other.indices)
                and self.sigma == other.sigma
                and np.array_equal(self.bits, other.bits)
                and self.dither_seed == other.dither_seed
                and self.frame_index == other.frame_index)

    @property
    def K(self) -> int:
        return self.indices.size

    @property
    def transmitted(self) -> np.ndarray:
        return self.bits > 0

    @property
    def max_index(self) -> np.ndarray:
        return _max_index(self.bits)

    @property
    def step(self) -> np.ndarray:
        """Per-bin step; ``inf`` for untransmitted bins."""
        step = choose_step(self.sigma**2, self.bits)
        return np.where(self.transmitted, step, np.inf)

    @property
    def dither(self) -> np.ndarray:
        if "dither" not in self._cache:
            if self.dither_seed is None:
                d = np.zeros(self.K)
            else:
                step = np.where(self.transmitted, self.step, 0.0)
                d = dither_offsets(self.dither_seed, self.frame_index, step)
            self._cache["dither"] = d
        return self._cache["dither"]


def encode_frame(coeffs, bits, dither_seed: int | None = None,
                 frame_index: int = 0) -> QuantizedFrame:
    """Quantize one perceptual frame with the given per-bin bit allocation."""
    y = np.asarray(coeffs, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.int64)
    if y.shape != bits.shape:
        raise ValueError("frame and bit allocation lengths differ")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite coefficient")
    sigma = side_info_sigma(y)
    qf = QuantizedFrame(np.zeros(y.size, dtype=np.int64), sigma, bits,
                        dither_seed, frame_index)
    sent = qf.transmitted
    step = np.where(sent, qf.step, 1.0)
    q = quantize(y, step, qf.max_index, qf.dither)
    return QuantizedFrame(np.where(sent, q, 0), sigma, bits, dither_seed,
                          frame_index)


def encode(pf_coeffs, bits, dither_seed: int | None = None) -> list[QuantizedFrame]:
    """Encode a ``(T, K)`` stack of perceptual coefficients frame by frame."""
    frames = np.atleast_2d(pf_coeffs)
    return [encode_frame(row, bits, dither_seed, t) for t, row in enumerate(frames)]


def decode(qf: QuantizedFrame) -> tuple[np.ndarray, BinLimits]:
    """Reconstruction and bin limits of one frame."""
    qmax = qf.max_index
    if np.any(np.abs(qf.indices) > qmax):
        raise ValueError("corrupt stream")
    sent = qf.transmitted
    outer = _outer_limit(qf.sigma, qf.K)
    step = np.where(sent, qf.step, 1.0)
    recon, lower, upper = dequantize(qf.indices, step, qmax, qf.dither, outer)
    recon = np.where(sent, recon, 0.0)
    lower = np.where(sent, lower, -outer)
    upper = np.where(sent, upper, outer)
    return recon, BinLimits(lower, upper)


def decode_frames(frames) -> tuple[np.ndarray, BinLimits, np.ndarray]:
    """Decode a sequence of frames into ``(T, K)`` arrays.

    Returns reconstruction, bin limits and the per-bin step (``inf`` where
    nothing was transmitted).
    """
    decoded = [decode(qf) for qf in frames]
    recon = np.stack([r for r, _ in decoded])
    lower = np.stack([lim.lower for _, lim in decoded])
    upper = np.stack([lim.upper for _, lim in decoded])
    step = np.stack([qf.step for qf in frames])
    return recon, BinLimits(lower, upper), step


def serialize(qf: QuantizedFrame) -> bytes:
    seed = -1 if qf.dither_seed is None else qf.dither_seed
    header = _FRAME_HEADER.pack(_FRAME_MAGIC, qf.K, qf.frame_index,
                                2 * LOADING * qf.sigma, seed)
    return (header + qf.bits.astype("u1").tobytes()
            + qf.indices.astype("<i2").tobytes())


def deserialize(data: bytes) -> QuantizedFrame:
    if len(data) < _FRAME_HEADER.size:
        raise ValueError("corrupt stream")
    magic, K, frame_index, scale, seed = _FRAME_HEADER.unpack_from(data)
    if magic != _FRAME_MAGIC or len(data) != _FRAME_HEADER.size + 3 * K:
        raise ValueError("corrupt stream")
    offset = _FRAME_HEADER.size
    bits = np.frombuffer(data, "u1", K, offset).astype(np.int64)
    indices = np.frombuffer(data, "<i2", K, offset + K).astype(np.int64)
    qf = QuantizedFrame(indices, scale / (2 * LOADING), bits,
                        None if seed < 0 else seed, frame_index)
    if np.any(np.abs(indices) > qf.max_index):
        raise ValueError("corrupt stream")
    return qf


def write_stream(path, frames, envelopes, sample_rate: int, n_samples: int):
    """Write an encoded signal: header, then per frame the lossless envelope
    (float64) followed by the serialized frame."""
    envelopes = np.atleast_2d(np.asarray(envelopes, dtype="<f8"))
    K = envelopes.shape[1]
    with open(Path(path), "wb") as fh:
        fh.write(_STREAM_HEADER.pack(_STREAM_MAGIC, K, sample_rate,
                                     len(frames), n_samples))
        for env, qf in zip(envelopes, frames):
            payload = serialize(qf)
            fh.write(env.tobytes())
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def read_stream(path):
    """Inverse of :func:`write_stream`.

    Returns ``(frames, envelopes, sample_rate, n_samples)``.
    """
    data = Path(path).read_bytes()
    try:
        magic, K, rate, n_frames, n_samples = _STREAM_HEADER.unpack_from(data)
    except struct.error:
        raise ValueError("corrupt stream") from None
    if magic != _STREAM_MAGIC:
        raise ValueError("corrupt stream")
    offset = _STREAM_HEADER.size
    frames, envelopes = [], []
    try:
        for _ in range(n_frames):
            envelopes.append(np.frombuffer(data, "<f8", K, offset))
            offset += 8 * K
            (size,) = struct.unpack_from("<I", data, offset)
            offset += 4
            frames.append(deserialize(data[offset:offset + size]))
            offset += size
    except (struct.error, ValueError):
        raise ValueError("corrupt stream") from None
    if offset != len(data):
        raise ValueError("corrupt stream")
    return frames, np.array(envelopes), rate, n_samples
