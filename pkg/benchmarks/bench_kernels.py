"""Compare the compiled transform kernel against the pure-Python fallback.

Both backends produce bit-identical output; this measures the speed gap
on batched transforms shaped like sweep workloads. Run:

    python3 benchmarks/bench_kernels.py [--rows 2000] [--length 1024]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from privseq import _kernels_py
from privseq._backend import active_backend
from privseq.transform import _tables


def _bench(fn, data, rev, tw, scale, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(data, rev, tw, scale)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--length", type=int, default=1024)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    n = args.length
    if n & (n - 1):
        parser.error("--length must be a power of two")

    rng = np.random.default_rng(0)
    data = rng.normal(0.0, 1.0, (args.rows, n)).astype(np.complex128)
    rev, tw, _ = _tables(n)

    print(f"batch {args.rows} x {n}, best of {args.repeats}")
    py = _bench(_kernels_py.fft_pow2_batch, data, rev, tw, 1.0, args.repeats)
    print(f"  python fallback : {py:8.4f} s")
    if active_backend() == "compiled":
        from privseq import _kernels

        cy = _bench(_kernels.fft_pow2_batch, data, rev, tw, 1.0, args.repeats)
        print(f"  compiled        : {cy:8.4f} s  ({py / cy:.2f}x)")
        same = np.array_equal(
            _kernels.fft_pow2_batch(data, rev, tw, 1.0),
            _kernels_py.fft_pow2_batch(data, rev, tw, 1.0),
        )
        print(f"  bit-identical   : {same}")
    else:
        print("  compiled        : unavailable (running on the fallback)")


if __name__ == "__main__":
    main()
