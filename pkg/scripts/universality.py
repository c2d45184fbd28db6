"""k = 1, 2 GinUE statistics for Gaussian-divisible sparse matrices, swept over N.

    python scripts/universality.py --ns 128 256 512 --samples 300
"""

import argparse

from sparsebulk.ensembles import EnsembleSpec
from sparsebulk.spectral import gaussian_divisible_samples, kpoint_compare, product_bump_integral


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ns", type=int, nargs="+", default=[128, 256, 512])
    parser.add_argument("--eps", type=float, default=0.4)
    parser.add_argument("--z", type=complex, default=0.2)
    parser.add_argument("--samples", type=int, default=300)
    parser.add_argument("--seed", type=int, default=10)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    for n in args.ns:
        t = n ** (-1 + 2 * args.eps)
        spec = EnsembleSpec(n=n, epsilon=args.eps, model="sparse", seed=args.seed)
        samples = gaussian_divisible_samples(spec, t, args.z, args.samples, threads=args.threads)
        for k in (1, 2):
            r = kpoint_compare(samples, args.z, k, prediction=product_bump_integral(1.0, k))
            print(f"N = {n:5d} t = {t:.4f} k = {k}: {r.estimate:.4f} +- {r.stderr:.4f} "
                  f"vs {r.prediction:.4f} ({r.z_score:+.2f} s.e.)")


if __name__ == "__main__":
    main()
