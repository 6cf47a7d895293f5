"""Scalar Monte Carlo: one clean and one noisy device observing the same value.

Device A sees the value with little noise, device B with a lot; both send a
uniformly quantized reading.  The script compares the mean squared error of
the joint posterior mean against each device on its own and against the
linear Wiener combination that treats quantization as additive noise.

    python demos/scalar_posterior.py --sigma-b 1.0 --step 1.0
"""

import argparse
import math

import numpy as np

from wasn_postfilter.estimator import mmse_batch
from wasn_postfilter.quantcodec import dequantize, quantize


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sigma-a", type=float, default=0.01)
    parser.add_argument("--sigma-b", type=float, default=1.0)
    parser.add_argument("--step", type=float, default=1.0)
    parser.add_argument("-n", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal(args.n)
    readings = []
    for sigma in (args.sigma_a, args.sigma_b):
        y = x + sigma * rng.standard_normal(args.n)
        readings.append(dequantize(quantize(y, args.step), args.step))
    (ra, la, ua), (rb, lb, ub) = readings
    ns = np.array([[args.sigma_a], [args.sigma_b]]) * np.ones(args.n)

    est = {
        # each device carries half of the unit-variance prior's precision
        "joint posterior": mmse_batch(np.stack([la, lb]), np.stack([ua, ub]), ns,
                                      math.sqrt(2.0) * np.ones((1, args.n)))[0],
        "device A alone": mmse_batch(la[None], ua[None], ns[:1], np.ones((1, args.n)))[0],
        "device B alone": mmse_batch(lb[None], ub[None], ns[1:], np.ones((1, args.n)))[0],
    }
    va = args.sigma_a**2 + args.step**2 / 12
    vb = args.sigma_b**2 + args.step**2 / 12
    est["linear Wiener"] = (ra / va + rb / vb) / (1 + 1 / va + 1 / vb)

    print(f"sigma_a={args.sigma_a} sigma_b={args.sigma_b} step={args.step} n={args.n}")
    for name, e in est.items():
        print(f"  {name:16s} MSE {np.mean((e - x) ** 2):.5f}")


if __name__ == "__main__":
    main()
