"""Command-line entry point ``wasn-postfilter``.

Subcommands
-----------
encode    WAV -> coded stream (``.qps``) at a given bitrate
decode    coded stream -> WAV (plain dequantization)
enhance   one or more synchronized coded streams -> enhanced WAV
evaluate  perceptual SNR of WAV estimates, or a summary of a scores CSV
grid      the full two-device experiment, configured by an INI file and flags

Exit status is 0 on success, 1 for configuration or input errors and 2 when
a grid run finished with failed rows.  Progress goes to standard error.

Grid configuration file
-----------------------
An INI file with an ``[experiment]`` section whose keys are the
:class:`~wasn_postfilter.harness.ExperimentConfig` fields.  Lists are comma
separated, booleans accept ``true/false/yes/no/1/0`` and relative paths are
taken relative to the file.  Each ``[reverb:NAME]`` section adds one
pre-rendered reverberant item with keys ``clean``, ``speech_a``,
``speech_b`` and optionally ``alpha``, ``noise_a``, ``noise_b``::

    [experiment]
    clean_wavs = clips/a.wav, clips/b.wav
    noise_wavs = babble.wav
    snr_b_grid = -5, 5, 15
    bitrates = 16000, 32000
    seed = 7
    output_dir = results

Command-line flags override values from the file.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import quantcodec
from .estimator import enhance_frame
from .harness import ConfigError, ExperimentConfig, ReverbItem, run_grid, with_overrides
from .metrics import SYSTEMS, aggregate, psnr, read_rows
from .transform import (PerceptualFrames, TransformConfig, analyze,
                        estimate_envelope, from_perceptual, read_wav,
                        synthesize, to_perceptual, write_wav)
from .variance import blind_variances

__all__ = ["main", "build_parser", "load_config"]

log = logging.getLogger("wasn_postfilter")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

_LIST_FLOAT = ("snr_b_grid", "bitrates")
_LIST_PATH = ("clean_wavs", "noise_wavs")
_BOOL = ("dither", "write_wavs")
_INT = ("grid_n", "seed", "jobs", "K", "sample_rate")
_FLOAT = ("snr_a", "split")


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment file (format in the module docstring)."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    base = path.parent
    section = parser["experiment"]
    known = {f.name for f in fields(ExperimentConfig)} - {"reverb_items"}
    values = {}
    try:
        for key in section:
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r}")
            raw = section[key]
            if key in _LIST_PATH:
                values[key] = tuple(str(base / p) for p in _split_list(raw))
            elif key in _LIST_FLOAT:
                values[key] = tuple(float(v) for v in _split_list(raw))
            elif key == "delay_samples":
                values[key] = tuple(int(v) for v in _split_list(raw))
            elif key in _BOOL:
                values[key] = section.getboolean(key)
            elif key in _INT:
                values[key] = section.getint(key)
            elif key in _FLOAT:
                values[key] = section.getfloat(key)
            elif key == "output_dir":
                values[key] = str(base / raw)
            else:
                values[key] = raw
        items = []
        for name in parser.sections():
            if not name.startswith("reverb:"):
                continue
            sec = parser[name]

            def get(k, sec=sec):
                return str(base / sec[k]) if k in sec else None
            for k in ("clean", "speech_a", "speech_b"):
                if k not in sec:
                    raise ConfigError(f"{path}: [{name}] needs {k!r}")
            alpha = sec.getfloat("alpha") if "alpha" in sec else None
            items.append(ReverbItem(name.split(":", 1)[1], alpha, get("clean"),
                                    get("speech_a"), get("speech_b"),
                                    get("noise_a"), get("noise_b")))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig(reverb_items=tuple(items), **values)


def _add_grid_flags(p):
    g = p.add_argument_group("experiment (override the config file)")
    g.add_argument("--clean-wavs", nargs="+", metavar="WAV")
    g.add_argument("--noise-wavs", nargs="+", metavar="WAV")
    g.add_argument("--snr-a", type=float)
    g.add_argument("--snr-b-grid", nargs="+", type=float, metavar="DB")
    g.add_argument("--bitrates", nargs="+", type=float, metavar="BPS")
    g.add_argument("--split", type=float, help="fraction of the bitrate given to device A")
    g.add_argument("--delay-samples", nargs=2, type=int, metavar=("A", "B"))
    g.add_argument("--dither", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--grid-n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir")
    g.add_argument("--variance-mode", choices=("oracle", "blind"))
    g.add_argument("--write-wavs", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wasn-postfilter",
        description="Bayesian postfilter for speech coded by several devices.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="code a mono WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--bitrate", type=float, required=True, help="bits per second")
    p.add_argument("--dither-seed", type=int)
    p.add_argument("--K", type=int, default=256, help="coefficients per frame")

    p = sub.add_parser("decode", help="dequantize a coded stream to WAV")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("enhance", help="fuse synchronized coded streams")
    p.add_argument("streams", nargs="+", help="coded streams; the first sets the output domain")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--grid-n", type=int, default=200)

    p = sub.add_parser("evaluate", help="score WAV estimates or summarize a CSV")
    p.add_argument("clean", nargs="?", help="clean reference WAV")
    p.add_argument("estimates", nargs="*", help="estimate WAVs")
    p.add_argument("--stream", help="coded stream whose envelope defines the metric domain")
    p.add_argument("--scores", help="scores CSV to summarize instead")

    p = sub.add_parser("grid", help="run the two-device experiment grid")
    p.add_argument("--config", help="INI experiment file")
    _add_grid_flags(p)
    return parser


def _cmd_encode(args):
    signal = read_wav(args.input)
    transform = TransformConfig(args.K, signal.sample_rate)
    coeffs = analyze(signal, transform)
    envelope = estimate_envelope(coeffs)
    pf = to_perceptual(coeffs, envelope)
    bits = quantcodec.allocate_bits(args.bitrate, transform.frame_rate, args.K)
    frames = quantcodec.encode(pf.coeffs, bits, args.dither_seed)
    quantcodec.write_stream(args.output, frames, envelope, signal.sample_rate, len(signal))
    log.info("encoded %d frames (%d bits each) to %s", len(frames), bits.sum(), args.output)
    return EXIT_OK


def _read_device(path):
    frames, envelopes, rate, n_samples = quantcodec.read_stream(path)
    recon, limits, _ = quantcodec.decode_frames(frames)
    return PerceptualFrames(recon, np.asarray(envelopes)), limits, rate, n_samples


def _cmd_decode(args):
    pf, _, rate, n_samples = _read_device(args.input)
    out = synthesize(from_perceptual(pf), TransformConfig(pf.K, rate), n_samples)
    write_wav(args.output, out)
    return EXIT_OK


def _cmd_enhance(args):
    devices = [_read_device(p) for p in args.streams]
    rates = {d[2] for d in devices}
    if len(rates) != 1:
        raise ValueError("streams differ in sample rate")
    n_frames = min(d[0].n_frames for d in devices)
    channels, noise_vars = [], []
    speech_var = None
    for pf, limits, _, _ in devices:
        pf = PerceptualFrames(pf.coeffs[:n_frames], pf.envelope[:n_frames])
        limits = quantcodec.BinLimits(limits.lower[:n_frames], limits.upper[:n_frames])
        track = blind_variances(pf.coeffs)
        if speech_var is None:
            speech_var = track.speech_var
        channels.append((pf, limits))
        noise_vars.append(track.noise_var)
    out = enhance_frame(channels, noise_vars, speech_var, args.grid_n)
    pf0, _, rate, n_samples = devices[0]
    signal = synthesize(from_perceptual(out), TransformConfig(pf0.K, rate), n_samples)
    write_wav(args.output, signal)
    log.info("fused %d streams into %s", len(devices), args.output)
    return EXIT_OK


def _cmd_evaluate(args):
    if args.scores:
        for cond, cols in aggregate(read_rows(args.scores)).items():
            snr_b, bitrate, alpha = cond
            parts = [f"snr_b={snr_b:g}", f"R={bitrate:g}"]
            if alpha is not None:
                parts.append(f"alpha={alpha:g}")
            for name in ("psnr_" + s for s in SYSTEMS):
                parts.append(f"{name}={cols[name]['mean']:.2f}")
            print(" ".join(parts))
        return EXIT_OK
    if not args.clean or not args.estimates:
        raise ConfigError("evaluate needs a clean WAV and at least one estimate, or --scores")
    clean = read_wav(args.clean)
    transform = TransformConfig(256, clean.sample_rate)
    clean_c = analyze(clean, transform)
    if args.stream:
        pf, _, _, _ = _read_device(args.stream)
        envelope = pf.envelope
        transform = TransformConfig(pf.K, clean.sample_rate)
        clean_c = analyze(clean, transform)
    else:
        envelope = estimate_envelope(clean_c)
    for path in args.estimates:
        est = read_wav(path)
        est_c = analyze(est, transform)
        n = min(len(clean_c), len(est_c), len(envelope))
        score = psnr(clean_c[:n] / envelope[:n], est_c[:n] / envelope[:n])
        print(f"{path}\t{score:.3f}")
    return EXIT_OK


def _cmd_grid(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "clean_wavs": tuple(args.clean_wavs) if args.clean_wavs else None,
        "noise_wavs": tuple(args.noise_wavs) if args.noise_wavs else None,
        "snr_a": args.snr_a,
        "snr_b_grid": tuple(args.snr_b_grid) if args.snr_b_grid else None,
        "bitrates": tuple(args.bitrates) if args.bitrates else None,
        "split": args.split,
        "delay_samples": tuple(args.delay_samples) if args.delay_samples else None,
        "dither": args.dither,
        "grid_n": args.grid_n,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "variance_mode": args.variance_mode,
        "write_wavs": args.write_wavs,
        "jobs": args.jobs,
    }
    cfg = with_overrides(cfg, **overrides).validate()
    rows = run_grid(cfg)
    failed = [r for r in rows if r.status != "ok"]
    log.info("wrote %d rows to %s", len(rows), Path(cfg.output_dir) / "scores.csv")
    if failed:
        log.warning("%d of %d grid points failed", len(failed), len(rows))
        return EXIT_PARTIAL
    return EXIT_OK


_COMMANDS = {
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "grid": _cmd_grid,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
