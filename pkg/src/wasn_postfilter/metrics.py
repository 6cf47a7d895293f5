"""Perceptual SNR, differential scores and their aggregation."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SYSTEMS",
    "DIFFERENTIALS",
    "CSV_HEADER",
    "PSNR_CAP",
    "ScoreRow",
    "psnr",
    "aggregate",
    "write_rows",
    "read_rows",
]

PSNR_CAP = 100.0
SYSTEMS = ("mc", "bl_a", "bl_b", "mwf", "decode")
# (column name, minuend, subtrahend)
DIFFERENTIALS = (
    ("rho_mc_bl_b", "mc", "bl_b"),
    ("rho_mc_bl_a", "mc", "bl_a"),
    ("rho_mc_mwf", "mc", "mwf"),
)
CSV_HEADER = (
    ["clip", "snr_a", "snr_b", "bitrate", "alpha", "status"]
    + [f"psnr_{s}" for s in SYSTEMS]
    + [name for name, _, _ in DIFFERENTIALS]
    + ["degenerate_bins"]
)


def psnr(clean, estimate) -> float:
    """``10 log10(sum x^2 / sum (x - xhat)^2)`` in dB, capped at ``PSNR_CAP``."""
    x = np.asarray(clean, dtype=np.float64)
    xhat = np.asarray(estimate, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    signal = np.sum(x**2)
    if signal == 0:
        raise ValueError("silent reference")
    error = np.sum((x - xhat) ** 2)
    if error < 1e-10 * signal:
        return PSNR_CAP
    return float(min(10 * np.log10(signal / error), PSNR_CAP))


@dataclass
class ScoreRow:
    """Scores of all systems for one (clip, SNR, bitrate) condition."""

    clip: str
    snr_b: float
    bitrate: float
    snr_a: float = 40.0
    alpha: float | None = None
    psnr: dict = field(default_factory=dict)
    status: str = "ok"
    degenerate_bins: int = 0

    @property
    def condition(self):
        return (self.snr_b, self.bitrate, self.alpha)

    def differential(self, a: str, b: str) -> float:
        return self.psnr[a] - self.psnr[b]

    @property
    def differentials(self) -> dict:
        if self.status != "ok":
            return {name: float("nan") for name, _, _ in DIFFERENTIALS}
        return {name: self.differential(a, b) for name, a, b in DIFFERENTIALS}

    def as_record(self) -> dict:
        rec = {
            "clip": self.clip,
            "snr_a": _fmt(self.snr_a),
            "snr_b": _fmt(self.snr_b),
            "bitrate": _fmt(self.bitrate),
            "alpha": "" if self.alpha is None else _fmt(self.alpha),
            "status": self.status,
            "degenerate_bins": str(self.degenerate_bins),
        }
        for s in SYSTEMS:
            rec[f"psnr_{s}"] = _fmt(self.psnr.get(s, float("nan")))
        for name, value in self.differentials.items():
            rec[name] = _fmt(value)
        return rec


def _fmt(value) -> str:
    return f"{float(value):.6f}"


def write_rows(path, rows):
    """One CSV line per :class:`ScoreRow` under :data:`CSV_HEADER`."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())


def read_rows(path) -> list[ScoreRow]:
    rows = []
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ScoreRow(
                clip=rec["clip"],
                snr_a=float(rec["snr_a"]),
                snr_b=float(rec["snr_b"]),
                bitrate=float(rec["bitrate"]),
                alpha=float(rec["alpha"]) if rec["alpha"] else None,
                psnr={s: float(rec[f"psnr_{s}"]) for s in SYSTEMS},
                status=rec["status"],
                degenerate_bins=int(rec["degenerate_bins"]),
            ))
    return rows


def _mean_ci(values):
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if values.size < 2:
        return {"mean": mean, "stderr": None, "ci": None, "n": int(values.size)}
    stderr = float(values.std(ddof=1) / np.sqrt(values.size))
    return {"mean": mean, "stderr": stderr,
            "ci": (mean - 1.96 * stderr, mean + 1.96 * stderr),
            "n": int(values.size)}


def aggregate(rows) -> dict:
    """Per-condition means with normal-approximation 95% intervals.

    Returns ``{(snr_b, bitrate, alpha): {column: {"mean", "stderr", "ci",
    "n"}}}`` for every PSNR and differential column; failed rows are
    skipped.  Conditions with a single row get ``ci=None``.
    """
    grouped = defaultdict(list)
    for row in rows:
        if row.status == "ok":
            grouped[row.condition].append(row)
    summary = {}
    def order(cond):
        snr_b, bitrate, alpha = cond
        return (alpha is not None, alpha or 0.0, bitrate, snr_b)

    for cond, members in sorted(grouped.items(), key=lambda kv: order(kv[0])):
        cols = {}
        for s in SYSTEMS:
            cols[f"psnr_{s}"] = _mean_ci([r.psnr[s] for r in members])
        for name, _, _ in DIFFERENTIALS:
            cols[name] = _mean_ci([r.differentials[name] for r in members])
        summary[cond] = cols
    return summary
