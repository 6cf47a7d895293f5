"""MMSE estimation of a coefficient from quantized noisy observations.

Each device ``i`` observes ``y_i = x + n_i`` with Gaussian background noise
``n_i ~ N(0, noise_std_i**2)`` and transmits only the quantization interval
``[l_i, u_i]`` containing ``y_i``.  Integrating the Gaussian likelihood over
that interval gives the per-channel factor

    P(l_i <= Y_i <= u_i | x) = 0.5 * (erf((u_i - x) / (noise_std_i sqrt 2))
                                      - erf((l_i - x) / (noise_std_i sqrt 2)))

so the posterior of ``x`` is a Gaussian prior truncated by a product of
erf differences.  Its mean has no closed form; it is computed with the
midpoint rule inside ``[min_i l_i, max_i u_i]``.  By default the panels are
placed on the part of that interval where the log posterior lies within 50
nats of its maximum (the posterior is log-concave, so this part is a single
interval found by golden-section search and bisection) with a panel
boundary at the mode; ``window="hull"`` spreads them evenly over the whole
interval instead.

The batched routine :func:`mmse_batch` does the work for arrays of bins;
the scalar dataclass API mirrors it for single bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf, erfc, log_ndtr

from .quantcodec import BinLimits
from .transform import PerceptualFrames

__all__ = [
    "VARIANCE_FLOOR",
    "PriorParams",
    "ChannelObservation",
    "PosteriorEstimate",
    "truncated_likelihood",
    "log_truncated_likelihood",
    "posterior_pdf_unnorm",
    "mmse_estimate",
    "mmse_batch",
    "enhance_frame",
]

VARIANCE_FLOOR = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PriorParams:
    std: float
    mean: float = 0.0

    def __post_init__(self):
        if not (self.std > 0 and math.isfinite(self.std) and math.isfinite(self.mean)):
            raise ValueError("prior needs a finite mean and positive finite std")


@dataclass(frozen=True)
class ChannelObservation:
    """Quantization interval, background noise level and prior of one channel."""

    lower: float
    upper: float
    noise_std: float
    prior: PriorParams

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("bin limits must be finite")
        if not self.lower < self.upper:
            raise ValueError("bin limits must satisfy lower < upper")
        if not (self.noise_std > 0 and math.isfinite(self.noise_std)):
            raise ValueError("noise_std must be positive and finite")


@dataclass(frozen=True)
class PosteriorEstimate:
    value: float
    mass: float
    grid_n: int
    degenerate: bool = False


def truncated_likelihood(x, obs: ChannelObservation):
    """Probability that the noisy value falls in ``obs``'s bin given ``x``."""
    scale = obs.noise_std * _SQRT2
    x = np.asarray(x, dtype=np.float64)
    p = 0.5 * (erf((obs.upper - x) / scale) - erf((obs.lower - x) / scale))
    p = np.clip(p, 0.0, 1.0)
    return p.item() if p.ndim == 0 else p


def _log_bin_probability(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, stable in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                               np.asarray(b, dtype=np.float64))
    shape = a.shape
    a, b = a.ravel(), b.ravel()
    # reflect intervals lying in the upper tail onto the lower tail
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    upper_cdf = 0.5 * erfc(-hi / _SQRT2)
    p = upper_cdf - 0.5 * erfc(-lo / _SQRT2)
    # narrow intervals deep in the tail cancel or underflow; redo those in logs
    redo = p <= 1e-6 * upper_cdf
    with np.errstate(divide="ignore"):
        out = np.log(p)
    if np.any(redo):
        log_hi = log_ndtr(hi[redo])
        log_lo = log_ndtr(lo[redo])
        with np.errstate(divide="ignore", invalid="ignore"):
            out[redo] = log_hi + np.log(-np.expm1(log_lo - log_hi))
    return out.reshape(shape)


def log_truncated_likelihood(x, lower, upper, noise_std):
    """Log of :func:`truncated_likelihood`, vectorized over all arguments."""
    return _log_bin_probability((lower - x) / noise_std, (upper - x) / noise_std)


def _log_gauss(x, mean, std):
    z = (x - mean) / std
    return -0.5 * z * z - np.log(std) - _LOG_SQRT_2PI


def posterior_pdf_unnorm(x, obs_list: Sequence[ChannelObservation]):
    """Product over channels of prior density times interval likelihood."""
    if len(obs_list) == 0:
        raise ValueError("at least one channel is required")
    x = np.asarray(x, dtype=np.float64)
    log_p = np.zeros(x.shape)
    for obs in obs_list:
        log_p = log_p + _log_gauss(x, obs.prior.mean, obs.prior.std)
        log_p = log_p + log_truncated_likelihood(x, obs.lower, obs.upper,
                                                 obs.noise_std)
    p = np.exp(log_p)
    return p.item() if p.ndim == 0 else p


def _pooled_prior_mean(prior_mean, prior_std):
    precision = 1.0 / prior_std**2
    return np.sum(prior_mean * precision, axis=0) / np.sum(precision, axis=0)


def _log_posterior(x, lo, up, ns, ps, pm):
    """Unnormalized log posterior at ``x`` (bins, g); parameters (M, bins, 1)."""
    out = np.zeros(x.shape)
    for i in range(lo.shape[0]):
        out += _log_gauss(x, pm[i], ps[i])
        out += log_truncated_likelihood(x, lo[i], up[i], ns[i])
    return out


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_STEPS = 64
BISECT_STEPS = 48
WINDOW_DROP = 50.0  # nats below the mode at which the window is cut
_BLOCK = 2**14  # grid points evaluated per vectorized block


def _posterior_window(f, left, right):
    """Sub-interval of ``[left, right]`` holding all but ~exp(-50) of the mass.

    The posterior is log-concave (Gaussian prior times log-concave interval
    likelihoods), so golden-section search finds its mode and bisection finds,
    on each side, the point where the log density has dropped by
    ``WINDOW_DROP`` nats.
    """
    a, b = left.copy(), right.copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(GOLDEN_STEPS):
        keep_left = fc >= fd
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
        probe = np.where(keep_left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        fp = f(probe)
        c, d = np.where(keep_left, probe, d), np.where(keep_left, c, probe)
        fc, fd = np.where(keep_left, fp, fd), np.where(keep_left, fc, fp)
    mode = 0.5 * (a + b)
    f_mode = f(mode)
    # a posterior monotone on the interval peaks exactly at one of its ends
    f_left, f_right = f(left), f(right)
    at_left = f_left >= f_mode
    at_right = ~at_left & (f_right >= f_mode)
    mode = np.where(at_left, left, np.where(at_right, right, mode))
    f_mode = np.where(at_left, f_left, np.where(at_right, f_right, f_mode))
    target = f_mode - WINDOW_DROP

    edges = []
    for end, f_end in ((left, f_left), (right, f_right)):
        inside = f_end >= target
        x_in, x_out = mode.copy(), end.copy()
        for _ in range(BISECT_STEPS):
            mid = 0.5 * (x_in + x_out)
            ok = f(mid) >= target
            x_in = np.where(ok, mid, x_in)
            x_out = np.where(ok, x_out, mid)
        edges.append(np.where(inside, end, x_out))
    return edges[0], mode, edges[1]


def _log_bin_probability_scalar(a, b):
    """Scalar twin of :func:`_log_bin_probability` built on :mod:`math`."""
    if a > 0:
        a, b = -b, -a
    upper_cdf = 0.5 * math.erfc(-b / _SQRT2)
    p = upper_cdf - 0.5 * math.erfc(-a / _SQRT2)
    if p > 1e-6 * upper_cdf:
        return math.log(p)
    log_hi, log_lo = float(log_ndtr(b)), float(log_ndtr(a))
    gap = -math.expm1(log_lo - log_hi)
    return log_hi + math.log(gap) if gap > 0 else -math.inf


def _log_posterior_scalar(x, channels):
    out = 0.0
    for lo, up, ns, ps, pm in channels:
        z = (x - pm) / ps
        out += -0.5 * z * z - math.log(ps) - _LOG_SQRT_2PI
        out += _log_bin_probability_scalar((lo - x) / ns, (up - x) / ns)
    return out


def _posterior_window_scalar(channels, left, right):
    """Same search as :func:`_posterior_window` for one bin, without numpy.

    Single-bin calls are dominated by per-call array overhead otherwise.
    """
    def f(x):
        return _log_posterior_scalar(x, channels)

    a, b = left, right
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(GOLDEN_STEPS):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    mode = 0.5 * (a + b)
    f_mode = f(mode)
    f_left, f_right = f(left), f(right)
    if f_left >= f_mode:
        mode, f_mode = left, f_left
    elif f_right >= f_mode:
        mode, f_mode = right, f_right
    target = f_mode - WINDOW_DROP

    edges = []
    for end, f_end in ((left, f_left), (right, f_right)):
        if f_end >= target:
            edges.append(end)
            continue
        x_in, x_out = mode, end
        for _ in range(BISECT_STEPS):
            mid = 0.5 * (x_in + x_out)
            if f(mid) >= target:
                x_in = mid
            else:
                x_out = mid
        edges.append(x_out)
    return edges[0], mode, edges[1]


def _panel_layout(left, mode, right, grid_n):
    """Per-bin layout of ``grid_n`` midpoint panels split at ``mode``.

    Each side of the mode gets panels in proportion to its length, but never
    fewer than a quarter of them unless it is empty.  A sharp bin edge next
    to the mode (the usual place for one) is then resolved by many panels
    instead of straddling one.  Returns ``(left, mode, n_left, step_left,
    step_right)``; :func:`_panels` turns a column range into midpoints.
    """
    width = right - left
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(width > 0, (mode - left) / width, 0.5)
    # a mode a rounding error away from an end is at that end
    mode = np.where(share < 1e-6, left, np.where(share > 1 - 1e-6, right, mode))
    quarter = grid_n // 4
    n_left = np.clip(np.rint(share * grid_n), quarter, grid_n - quarter)
    n_left = np.where(mode <= left, 0, np.where(mode >= right, grid_n, n_left))
    n_left = n_left.astype(np.int64)
    step_left = (mode - left) / np.maximum(n_left, 1)
    step_right = (right - mode) / np.maximum(grid_n - n_left, 1)
    return left, mode, n_left, step_left, step_right


def _panels(layout, j0, j1):
    """Midpoints and widths of panels ``j0 <= j < j1``, shape (bins, j1 - j0)."""
    left, mode, n_left, step_left, step_right = (v[:, None] for v in layout)
    j = np.arange(j0, j1)[None, :]
    on_left = j < n_left
    dx = np.where(on_left, step_left, step_right)
    origin = np.where(on_left, left, mode - n_left * step_right)
    return origin + (j + 0.5) * dx, dx


def mmse_batch(lower, upper, noise_std, prior_std, prior_mean=0.0,
               grid_n: int = 200, window: str = "posterior", chunk: int = 8192):
    """Posterior means for many independent bins at once.

    Parameters
    ----------
    lower, upper, noise_std, prior_std, prior_mean : array_like
        Broadcastable arrays of shape ``(M, ...)``, one leading row per
        channel; the trailing shape indexes the bins.
    grid_n : int
        Number of midpoint-rule panels.
    window : {"posterior", "hull"}
        Integration interval.  ``"hull"`` spreads the panels evenly over
        ``[min_i lower_i, max_i upper_i]``.  ``"posterior"`` (default) first
        shrinks that interval to the part where the log posterior is within
        50 nats of its maximum, so the panels resolve the posterior even when
        one channel's interval is orders of magnitude wider than it, and
        puts a panel boundary at the posterior mode.
    chunk : int
        Bins per vectorized window search.  Grid evaluation is further
        split into blocks of about ``2**14`` points.

    Returns
    -------
    value : ndarray
        Posterior means, shape ``(...)``.
    log_mass : ndarray
        Log of the midpoint-rule integral of the unnormalized posterior.
    degenerate : ndarray of bool
        Bins where every grid weight vanished; their value is the pooled
        prior mean clamped into ``[min_i lower_i, max_i upper_i]``.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    if window not in ("posterior", "hull"):
        raise ValueError(f"unknown window {window!r}")
    arrays = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in
                                   (lower, upper, noise_std, prior_std, prior_mean)))
    if arrays[0].ndim == 0:
        raise ValueError("expected a leading channel axis")
    M = arrays[0].shape[0]
    bin_shape = arrays[0].shape[1:]
    lo, up, ns, ps, pm = (a.reshape(M, -1) for a in arrays)
    if np.any(lo >= up):
        raise ValueError("bin limits must satisfy lower < upper")
    if np.any(ns <= 0) or np.any(ps <= 0):
        raise ValueError("standard deviations must be positive")

    n_bins = lo.shape[1]
    value = np.empty(n_bins)
    log_mass = np.empty(n_bins)
    degenerate = np.zeros(n_bins, dtype=bool)
    # the grid is evaluated in cache-sized blocks of rows and columns
    rows = max(1, _BLOCK // grid_n)
    cols = min(grid_n, _BLOCK)

    for start in range(0, n_bins, max(1, chunk)):
        sl = slice(start, min(start + max(1, chunk), n_bins))
        params = [v[:, sl, None] for v in (lo, up, ns, ps, pm)]
        hull_left = lo[:, sl].min(axis=0)
        hull_right = up[:, sl].max(axis=0)
        if window == "posterior" and hull_left.size == 1:
            channels = [tuple(float(v[i, 0, 0]) for v in params) for i in range(M)]
            edges = _posterior_window_scalar(channels, float(hull_left[0]),
                                             float(hull_right[0]))
            layout = _panel_layout(*(np.array([e]) for e in edges), grid_n)
        elif window == "posterior":
            def f(x):
                return _log_posterior(x[:, None], *params)[:, 0]
            layout = _panel_layout(*_posterior_window(f, hull_left, hull_right), grid_n)
        else:
            layout = _panel_layout(hull_left, hull_right, hull_right, grid_n)

        # running maximum keeps the weights in range across column blocks
        n = hull_left.size
        peak = np.full(n, -np.inf)
        total = np.zeros(n)
        moment = np.zeros(n)
        for r0 in range(0, n, rows):
            r = slice(r0, min(r0 + rows, n))
            lay = [v[r] for v in layout]
            par = [v[:, r] for v in params]
            for j0 in range(0, grid_n, cols):
                x, dx = _panels(lay, j0, min(j0 + cols, grid_n))
                log_w = _log_posterior(x, *par)
                new_peak = np.maximum(peak[r], log_w.max(axis=1))
                shift = np.where(np.isfinite(new_peak), new_peak, 0.0)
                w = np.exp(log_w - shift[:, None]) * dx
                rescale = np.exp(peak[r] - shift)
                total[r] = total[r] * rescale + w.sum(axis=1)
                moment[r] = moment[r] * rescale + (w * x).sum(axis=1)
                peak[r] = new_peak
        bad = ~np.isfinite(peak)
        with np.errstate(invalid="ignore", divide="ignore"):
            est = moment / total
            lm = peak + np.log(total)
        if np.any(bad):
            fallback = _pooled_prior_mean(pm[:, sl], ps[:, sl])
            est = np.where(bad, np.clip(fallback, hull_left, hull_right), est)
            lm = np.where(bad, -np.inf, lm)
        # rounding can push a convex combination a hair past the interval
        value[sl] = np.clip(est, hull_left, hull_right)
        log_mass[sl] = lm
        degenerate[sl] = bad
    return (value.reshape(bin_shape), log_mass.reshape(bin_shape),
            degenerate.reshape(bin_shape))


def mmse_estimate(obs_list: Sequence[ChannelObservation], grid_n: int = 200,
                  window: str = "posterior") -> PosteriorEstimate:
    """Posterior mean of a single bin observed by one or more channels."""
    if len(obs_list) == 0:
        raise ValueError("at least one channel is required")
    value, log_mass, degenerate = mmse_batch(
        [o.lower for o in obs_list],
        [o.upper for o in obs_list],
        [o.noise_std for o in obs_list],
        [o.prior.std for o in obs_list],
        [o.prior.mean for o in obs_list],
        grid_n=grid_n,
        window=window,
    )
    return PosteriorEstimate(float(value), float(np.exp(log_mass)), grid_n,
                             bool(degenerate))


def enhance_frame(channels: Sequence[tuple[PerceptualFrames, BinLimits]],
                  noise_vars: Sequence, speech_vars, grid_n: int = 200,
                  envelope=None, return_degenerate: bool = False):
    """Multidevice estimate of one frame (or a ``(T, K)`` stack of frames).

    Parameters
    ----------
    channels : sequence of (PerceptualFrames, BinLimits)
        Decoded output of each device.  Bin limits live in that device's own
        perceptual domain.
    noise_vars : sequence of array_like
        Background noise variance per channel and bin, in the channel's
        perceptual domain.
    speech_vars : array_like
        Speech prior variance per bin in the output domain.
    grid_n : int
        Midpoint-rule panels per bin.
    envelope : array_like, optional
        Envelope of the output perceptual domain; defaults to the first
        channel's.

    Notes
    -----
    Intervals and noise levels are rescaled into the output domain by the
    ratio of envelopes.  Every channel carries the zero-mean prior with
    variance ``M * speech_vars`` so that the product over ``M`` channels
    reproduces a single ``N(0, speech_vars)`` prior on the coefficient.
    """
    if len(channels) == 0:
        raise ValueError("at least one channel is required")
    if len(noise_vars) != len(channels):
        raise ValueError("one noise variance array per channel is required")
    shape = channels[0][0].coeffs.shape
    for pf, limits in channels:
        if pf.coeffs.shape != shape or np.shape(limits.lower) != shape:
            raise ValueError("channels differ in frame size K")
    env_out = channels[0][0].envelope if envelope is None else np.asarray(envelope)
    M = len(channels)

    lower, upper, noise_std = [], [], []
    for (pf, limits), nv in zip(channels, noise_vars):
        scale = pf.envelope / env_out
        lower.append(limits.lower * scale)
        upper.append(limits.upper * scale)
        noise_std.append(np.sqrt(np.maximum(nv, VARIANCE_FLOOR)) * scale)
    prior_std = np.sqrt(M * np.maximum(speech_vars, VARIANCE_FLOOR))
    prior_std = np.broadcast_to(prior_std, shape)

    value, _, degenerate = mmse_batch(np.stack(lower), np.stack(upper),
                                      np.stack(noise_std), prior_std[None],
                                      grid_n=grid_n)
    out = PerceptualFrames(value, np.broadcast_to(env_out, shape))
    if return_degenerate:
        return out, degenerate
    return out
