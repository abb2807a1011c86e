"""Time the LCS and fragment kernels on each available backend.

    python benchmarks/bench_kernels.py [--length 200] [--pairs 200] [--repeat 3]
"""
import argparse
import timeit

import numpy as np

from relaxsum import kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=200)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--alphabet", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pairs = [(rng.integers(0, args.alphabet, args.length // 4), rng.integers(0, args.alphabet, args.length))
             for _ in range(args.pairs)]
    print(f"{args.pairs} pairs, summary {args.length // 4} / document {args.length} tokens")
    print(f"{'kernel':<18}{'backend':<10}{'best (ms)':>12}{'speedup':>10}")
    for name, fn in (("lcs_length", kernels.lcs_length), ("greedy_fragments", kernels.greedy_fragments)):
        base = None
        for backend in kernels.available_backends():
            t = min(timeit.repeat(lambda: [fn(s, d, backend=backend) for s, d in pairs],
                                  number=1, repeat=args.repeat))
            base = base or t
            print(f"{name:<18}{backend:<10}{t * 1e3:>12.2f}{base / t:>9.1f}x")


if __name__ == "__main__":
    main()
