"""Two-device experiment: mix, encode, enhance, score.

For every clip, device-B input SNR and total bitrate the harness

1. mixes the clean clip with noise at 40 dB SNR for device A and at the
   target SNR for device B (A uses a different segment of the noise),
2. compensates known per-device delays,
3. codes A at ``split * R`` and B at ``(1 - split) * R`` (and B alone at
   ``R`` for the single-device references),
4. runs the multidevice posterior estimate (``mc``), the single-device
   posterior estimates (``bl_a``, ``bl_b``), the diagonal MWF (``mwf``) and
   the plain full-rate decode of B (``decode``),
5. scores every system by perceptual SNR and writes one CSV row plus one
   WAV per system.

All scores live in device A's perceptual domain: clean and estimated
transform coefficients are both divided by A's transmitted envelope.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import quantcodec
from .baselines import mwf_diagonal, single_channel_baseline
from .estimator import enhance_frame
from .metrics import SYSTEMS, ScoreRow, psnr, write_rows
from .quantcodec import BinLimits
from .transform import (PerceptualFrames, SignalBuffer, TransformConfig,
                        analyze, estimate_envelope, from_perceptual, read_wav,
                        synthesize, to_perceptual, write_wav)
from .variance import blind_variances, smooth_power

__all__ = [
    "ConfigError",
    "Mixture",
    "ReverbItem",
    "ExperimentConfig",
    "mix_at_snr",
    "align",
    "code_device",
    "Source",
    "DeviceStream",
    "noise_offset",
    "run_condition",
    "wav_name",
    "run_grid",
]

log = logging.getLogger(__name__)

CROSSFADE_S = 0.1


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class Mixture:
    noisy: SignalBuffer
    speech: SignalBuffer
    noise: SignalBuffer
    looped: bool = False


def _power(x):
    return float(np.mean(np.square(x)))


def _loop_noise(noise: np.ndarray, needed: int, fade: int) -> np.ndarray:
    fade = max(1, min(fade, noise.size // 2))
    ramp = np.linspace(0.0, 1.0, fade)
    out = noise.copy()
    while out.size < needed:
        joint = out[-fade:] * (1 - ramp) + noise[:fade] * ramp
        out = np.concatenate([out[:-fade], joint, noise[fade:]])
    return out


def mix_at_snr(clean: SignalBuffer, noise: SignalBuffer, snr_db: float,
               offset: int = 0) -> Mixture:
    """Add noise scaled to ``snr_db`` relative to the clean signal power.

    Noise is read from ``offset`` on; if it runs out it is looped with a
    100 ms linear crossfade and the mixture is flagged ``looped``.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rates differ")
    x = clean.samples
    if x.size == 0 or _power(x) == 0:
        raise ValueError("silent clean signal")
    if _power(noise.samples) == 0:
        raise ValueError("silent noise signal")
    needed = offset + x.size
    looped = needed > noise.samples.size
    n = noise.samples
    if looped:
        n = _loop_noise(n, needed, int(CROSSFADE_S * noise.sample_rate))
    n = n[offset:needed]
    if _power(n) == 0:
        raise ValueError("silent noise segment")
    gain = np.sqrt(_power(x) / (_power(n) * 10 ** (snr_db / 10)))
    n = gain * n
    rate = clean.sample_rate
    return Mixture(SignalBuffer(x + n, rate), clean, SignalBuffer(n, rate), looped)


def _shift(x: np.ndarray, delay: int) -> np.ndarray:
    if delay > 0:
        return np.concatenate([x[delay:], np.zeros(delay)])
    if delay < 0:
        return np.concatenate([np.zeros(-delay), x[:delay]])
    return x.copy()


def align(channels, delays):
    """Advance each channel by its delay in samples (negative delays retard).

    Vacated samples are zero-filled and all outputs are trimmed to the
    shortest input length.
    """
    if len(channels) != len(delays):
        raise ValueError("one delay per channel is required")
    arrays = [c.samples if isinstance(c, SignalBuffer) else np.asarray(c, float)
              for c in channels]
    for x, d in zip(arrays, delays):
        if int(d) != d:
            raise ValueError("delays must be integers")
        if abs(int(d)) >= x.size:
            raise ValueError("delay exceeds signal length")
    length = min(x.size for x in arrays)
    out = [_shift(x, int(d))[:length] for x, d in zip(arrays, delays)]
    if all(isinstance(c, SignalBuffer) for c in channels):
        return [SignalBuffer(x, c.sample_rate) for x, c in zip(out, channels)]
    return out


@dataclass(frozen=True)
class ReverbItem:
    """Pre-rendered device signals for one reverberant condition."""

    name: str
    alpha: float
    clean: str
    speech_a: str
    speech_b: str
    noise_a: str | None = None
    noise_b: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    clean_wavs: tuple = ()
    noise_wavs: tuple = ()
    reverb_items: tuple = ()
    snr_a: float = 40.0
    snr_b_grid: tuple = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    bitrates: tuple = (16000, 24000, 32000, 48000, 64000, 80000, 96000)
    split: float = 0.25
    delay_samples: tuple = (0, 0)
    dither: bool = False
    grid_n: int = 200
    seed: int = 0
    output_dir: str = "results"
    variance_mode: str = "oracle"
    write_wavs: bool = True
    jobs: int = 1
    K: int = 256
    sample_rate: int = 16000

    def validate(self):
        if not self.clean_wavs and not self.reverb_items:
            raise ConfigError("no clean_wavs or reverb items given")
        if self.clean_wavs and not self.noise_wavs:
            raise ConfigError("noise_wavs is empty")
        if self.reverb_items and not self.noise_wavs and any(
                it.noise_a is None or it.noise_b is None for it in self.reverb_items):
            raise ConfigError("reverb items without noise stems need noise_wavs")
        if not self.snr_b_grid or not self.bitrates:
            raise ConfigError("snr_b_grid and bitrates must be nonempty")
        if not 0 < self.split < 1:
            raise ConfigError("split must lie in (0, 1)")
        if len(self.delay_samples) != 2:
            raise ConfigError("delay_samples needs one value per device")
        if self.grid_n < 2:
            raise ConfigError("grid_n must be at least 2")
        if self.variance_mode not in ("oracle", "blind"):
            raise ConfigError(f"unknown variance_mode {self.variance_mode!r}")
        paths = list(self.clean_wavs) + list(self.noise_wavs)
        for it in self.reverb_items:
            paths += [p for p in (it.clean, it.speech_a, it.speech_b,
                                  it.noise_a, it.noise_b) if p]
        missing = [p for p in paths if not Path(p).is_file()]
        if missing:
            raise ConfigError(f"missing input files: {', '.join(map(str, missing))}")
        return self


@dataclass
class DeviceStream:
    """Encoder-side envelope and decoder-side view of one coded device."""

    envelope: np.ndarray
    frames: list
    recon: np.ndarray
    limits: BinLimits
    steps: np.ndarray

    @property
    def decoded(self) -> PerceptualFrames:
        return PerceptualFrames(self.recon, self.envelope)

    @property
    def channel(self):
        return self.decoded, self.limits


def code_device(noisy: SignalBuffer, bits, dither_seed=None,
                transform: TransformConfig = TransformConfig()) -> DeviceStream:
    """Analyze, normalize by the noisy envelope, quantize and decode."""
    coeffs = analyze(noisy, transform)
    envelope = estimate_envelope(coeffs)
    pf = to_perceptual(coeffs, envelope)
    frames = quantcodec.encode(pf.coeffs, bits, dither_seed)
    recon, limits, steps = quantcodec.decode_frames(frames)
    return DeviceStream(envelope, frames, recon, limits, steps)


@dataclass
class Source:
    """Signals behind one clip: dry reference, device speech images, noises."""

    name: str
    clean: SignalBuffer
    speech_a: SignalBuffer
    speech_b: SignalBuffer
    noise_a: SignalBuffer
    noise_b: SignalBuffer
    alpha: float | None = None
    independent_noise: bool = False


def wav_name(clip: str, snr_b: float, bitrate: float, system: str) -> str:
    return f"{clip}__snrB{snr_b:g}dB__R{bitrate / 1000:g}k__{system}.wav"


def _job_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


@dataclass
class ConditionResult:
    row: ScoreRow
    signals: dict = field(default_factory=dict)


def noise_offset(source: Source, seed) -> int:
    """Random start of device B's noise segment for ``source``."""
    span = len(source.noise_b)
    rng = np.random.default_rng(seed)
    return int(rng.integers(0, max(1, span - len(source.clean) + 1)))


def run_condition(source: Source, snr_b: float, bitrate: float,
                  cfg: ExperimentConfig, job_seed: int,
                  offset: int | None = None) -> ConditionResult:
    """Run every system on one (clip, SNR, bitrate) point.

    ``offset`` is the start of device B's noise segment; ``run_grid`` fixes
    it per clip so that all conditions of a clip share one noise
    realization.  When omitted it is drawn from ``job_seed``.
    """
    rng = np.random.default_rng(job_seed)
    transform = TransformConfig(cfg.K, cfg.sample_rate)

    # noise segments: B at the given offset, A half a noise file away from it
    if source.independent_noise:
        off_a = off_b = 0
    else:
        span = len(source.noise_b)
        off_b = noise_offset(source, rng) if offset is None else int(offset)
        off_a = (off_b + span // 2) % span
    mix_a = mix_at_snr(source.speech_a, source.noise_a, cfg.snr_a, off_a)
    mix_b = mix_at_snr(source.speech_b, source.noise_b, snr_b, off_b)

    delays = list(cfg.delay_samples)
    noisy_a, noisy_b = align([mix_a.noisy, mix_b.noisy], delays)
    noise_a, noise_b = align([mix_a.noise, mix_b.noise], delays)
    clean = SignalBuffer(source.clean.samples[: len(noisy_a)], cfg.sample_rate)
    if len(clean) < len(noisy_a):
        raise ValueError("reference shorter than device signals")

    rate = quantcodec.RateConfig(bitrate, cfg.split, transform.frame_rate, cfg.K)
    seeds = (rng.integers(2**31, size=3) if cfg.dither else [None] * 3)
    dev_a = code_device(noisy_a, rate.bits_a(), seeds[0], transform)
    dev_b = code_device(noisy_b, rate.bits_b(), seeds[1], transform)
    dev_full = code_device(noisy_b, rate.bits_full(), seeds[2], transform)

    clean_c = analyze(clean, transform)
    noise_a_c = analyze(noise_a, transform)
    noise_b_c = analyze(noise_b, transform)

    if cfg.variance_mode == "oracle":
        def variances(dev, noise_coeffs):
            speech = np.maximum(smooth_power(clean_c / dev.envelope), 1e-12)
            noise = np.maximum(smooth_power(noise_coeffs / dev.envelope), 1e-12)
            return speech, noise
        sv_a, nv_a = variances(dev_a, noise_a_c)
        _, nv_b = variances(dev_b, noise_b_c)
        sv_full, nv_full = variances(dev_full, noise_b_c)
    else:
        track_a = blind_variances(dev_a.recon)
        sv_a, nv_a = track_a.speech_var, track_a.noise_var
        nv_b = blind_variances(dev_b.recon).noise_var
        track_full = blind_variances(dev_full.recon)
        sv_full, nv_full = track_full.speech_var, track_full.noise_var

    mc, deg_mc = enhance_frame([dev_a.channel, dev_b.channel], [nv_a, nv_b],
                               sv_a, cfg.grid_n, return_degenerate=True)
    bl_a, deg_a = single_channel_baseline(dev_a.channel, nv_a, sv_a, cfg.grid_n,
                                          return_degenerate=True)
    bl_b, deg_b = single_channel_baseline(dev_full.channel, nv_full, sv_full,
                                          cfg.grid_n, return_degenerate=True)
    mwf = mwf_diagonal([dev_a.decoded, dev_b.decoded], sv_a, [nv_a, nv_b],
                       steps=[dev_a.steps, dev_b.steps])

    estimates = {
        "mc": from_perceptual(mc),
        "bl_a": from_perceptual(bl_a),
        "bl_b": from_perceptual(bl_b),
        "mwf": from_perceptual(mwf),
        "decode": from_perceptual(dev_full.decoded),
    }
    reference = dev_a.envelope
    target = clean_c / reference
    scores = {name: psnr(target, est / reference) for name, est in estimates.items()}
    row = ScoreRow(source.name, snr_b, bitrate, cfg.snr_a, source.alpha, scores,
                   degenerate_bins=int(deg_mc.sum() + deg_a.sum() + deg_b.sum()))
    signals = {}
    if cfg.write_wavs:
        signals = {name: synthesize(est, transform, len(clean))
                   for name, est in estimates.items()}
    return ConditionResult(row, signals)


def _load(path, cfg) -> SignalBuffer:
    buf = read_wav(path)
    if buf.sample_rate != cfg.sample_rate:
        raise ConfigError(f"{path}: sample rate {buf.sample_rate}, expected "
                          f"{cfg.sample_rate}")
    return buf


def _sources(cfg: ExperimentConfig) -> list[Source]:
    noises = [_load(p, cfg) for p in cfg.noise_wavs]
    sources = []
    for i, path in enumerate(cfg.clean_wavs):
        clean = _load(path, cfg)
        noise = noises[i % len(noises)]
        sources.append(Source(Path(path).stem, clean, clean, clean, noise, noise))
    for j, it in enumerate(cfg.reverb_items):
        clean = _load(it.clean, cfg)
        if it.noise_a and it.noise_b:
            na, nb, indep = _load(it.noise_a, cfg), _load(it.noise_b, cfg), True
        else:
            na = nb = noises[j % len(noises)]
            indep = False
        sources.append(Source(it.name, clean, _load(it.speech_a, cfg),
                              _load(it.speech_b, cfg), na, nb, it.alpha, indep))
    return sources


def _run_job(args):
    source, snr_b, bitrate, cfg, job_seed, offset, out_dir = args
    try:
        result = run_condition(source, snr_b, bitrate, cfg, job_seed, offset)
    except Exception as exc:  # a failed grid point must not stop the run
        log.warning("%s snr_b=%g R=%g failed: %s", source.name, snr_b, bitrate, exc)
        return ScoreRow(source.name, snr_b, bitrate, cfg.snr_a, source.alpha,
                        {s: float("nan") for s in SYSTEMS},
                        status=f"failed:{type(exc).__name__}")
    if out_dir is not None:
        for name, sig in result.signals.items():
            write_wav(out_dir / wav_name(source.name, snr_b, bitrate, name), sig)
    return result.row


def run_grid(cfg: ExperimentConfig, sources: list[Source] | None = None):
    """Run the full grid and write ``scores.csv`` (and WAVs) to ``output_dir``.

    ``sources`` may be passed directly (e.g. synthetic signals) instead of
    being read from the configured WAV files.

    Returns the list of :class:`ScoreRow` in job order.
    """
    if sources is None:
        cfg.validate()
        sources = _sources(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i, source in enumerate(sources):
        # one noise realization per clip: conditions differ only in level and rate
        offset = noise_offset(source, [cfg.seed, i])
        for bitrate in cfg.bitrates:
            for snr_b in cfg.snr_b_grid:
                seed = _job_seed(cfg.seed, len(jobs))
                jobs.append((source, float(snr_b), float(bitrate), cfg, seed,
                             offset, out_dir if cfg.write_wavs else None))
    rows = []
    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg.jobs) as pool:
            for i, row in enumerate(pool.map(_run_job, jobs)):
                rows.append(row)
                log.info("[%d/%d] %s", i + 1, len(jobs), row.clip)
    else:
        for i, job in enumerate(jobs):
            rows.append(_run_job(job))
            log.info("[%d/%d] %s snr_b=%g R=%g", i + 1, len(jobs), job[0].name,
                     job[1], job[2])
    write_rows(out_dir / "scores.csv", rows)
    return rows


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Copy of ``cfg`` with every non-``None`` override applied."""
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
