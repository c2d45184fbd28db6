"""Zig-step stability: max_t |S_t| / Psi^av(eta_t) over many OU trajectories.

    python scripts/zig_stability.py --n 256 --trajectories 50 --eta-end 0.05
"""

import argparse
import json

import numpy as np

from sparsebulk.ensembles import EnsembleSpec
from sparsebulk.flow import ZigChain, time_to_eta, zig_run
from sparsebulk.parallel import pmap
from sparsebulk.quaternion import BASIS

PATTERNS = [("E+",), ("F", "F~"), ("E+", "E+")]


def job(args):
    spec, z0, w0, t_end, seed, j = args
    chains = [ZigChain([w0] * len(p), [BASIS[b] for b in p]) for p in PATTERNS]
    res = zig_run(spec, z0, chains, t_end, seed=seed, stream=j)
    return res.max_ratio, res.truncated


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=256)
    parser.add_argument("--z0", type=complex, default=0.3)
    parser.add_argument("--w0", type=complex, default=1j)
    parser.add_argument("--eta-end", type=float, default=0.05)
    parser.add_argument("--trajectories", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    spec = EnsembleSpec(n=args.n, seed=args.seed)
    t_end = time_to_eta(args.z0, args.w0, args.eta_end)
    out = pmap(job, [(spec, args.z0, args.w0, t_end, args.seed, j) for j in range(args.trajectories)],
               args.threads)
    summary = {"t_end": t_end, "truncated": sum(t for _, t in out)}
    for p in PATTERNS:
        name = ",".join(p)
        r = np.array([mr[name] for mr, _ in out])
        summary[name] = {"median": float(np.median(r)), "max": float(r.max()),
                         "stable_fraction": float(np.mean(r <= 10))}
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
