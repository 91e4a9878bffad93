"""Time the cutoff objective: numba-compiled loop kernel vs vectorized numpy.

    python3 benchmarks/bench_cutoff.py [--sizes 16 64 200 1000] [--repeat 50]

Run with GRIDFLOW_DISABLE_NUMBA=1 to time the plain-Python loop instead.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from gridflow.retrieval._kernels import BACKEND, KERNELS


def profile(n: int, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.uniform(-1.0, 1.0, n))[::-1].copy()


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 200, 1000])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    _, loop = KERNELS["loop"]
    _, vec = KERNELS["numpy"]
    loop(profile(8, rng))  # trigger compilation outside the timed region

    print(f"loop kernel backend: {BACKEND}")
    print(f"{'N':>6} {'loop ms':>10} {'numpy ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for n in args.sizes:
        y = profile(n, rng)
        diff = float(np.max(np.abs(loop(y) - vec(y))))
        t_loop = min(timeit.repeat(lambda: loop(y), number=1, repeat=args.repeat)) * 1e3
        t_vec = min(timeit.repeat(lambda: vec(y), number=1, repeat=args.repeat)) * 1e3
        print(f"{n:>6} {t_loop:>10.3f} {t_vec:>10.3f} {t_vec / t_loop:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
