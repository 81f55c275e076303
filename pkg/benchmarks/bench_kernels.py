"""Benchmark the compiled kernels against the pure-Python fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--iterations N] [--width W]

Times the four hot kernels back to back on identical inputs and reports the
per-call cost and speedup, then runs a short end-to-end device loop under
each backend (the fallback is forced with CYCLAB_PURE=1 in a subprocess so
the import-time backend selection is exercised for real).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cyclab._kernels import fallback

try:
    from cyclab._kernels import _core
except ImportError:
    _core = None


def time_call(fn, args, iterations):
    t0 = time.perf_counter_ns()
    for _ in range(iterations):
        fn(*args)
    return (time.perf_counter_ns() - t0) / iterations


def bench_kernels(iterations, width):
    rng = np.random.default_rng(0)
    row = rng.normal(size=width)
    capacity = 4
    frames = rng.normal(size=(capacity, width))
    stamps = np.array([4, 1, 2, 3], dtype=np.int64)
    checksums = np.array([fallback.checksum_row(frames[i])
                          for i in range(capacity)], dtype=np.uint64)
    out = np.empty(width)

    cases = [
        ("checksum_row", "checksum_row", (row,)),
        ("pid_step", "pid_step",
         (2.0, 0.5, 0.1, 1.0, 10.0, 0.3, 0.1, 0.7)),
        ("plant_step", "plant_step", (0.9, 0.1, 0.5, 1.0, 0.0)),
        ("try_read_cycle", "try_read_cycle",
         (stamps, frames, checksums, 3, capacity - 1, out)),
    ]

    print(f"kernel microbenchmarks ({iterations} iterations, "
          f"frame width {width})")
    header = f"{'kernel':<16}{'python ns':>12}{'cython ns':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, name, args in cases:
        py_ns = time_call(getattr(fallback, name), args, iterations)
        if _core is None:
            print(f"{label:<16}{py_ns:>12.0f}{'n/a':>12}{'n/a':>10}")
            continue
        cy_ns = time_call(getattr(_core, name), args, iterations)
        print(f"{label:<16}{py_ns:>12.0f}{cy_ns:>12.0f}"
              f"{py_ns / cy_ns:>9.1f}x")


END_TO_END = r"""
import time
from cyclab import _kernels
from cyclab.device import build_single_asset_device
dev = build_single_asset_device()
t0 = time.perf_counter()
dev.run({cycles})
dt = time.perf_counter() - t0
print(f"{{_kernels.BACKEND:>8}}: {cycles} cycles in {{dt:.3f}}s "
      f"({{dt / {cycles} * 1e6:.1f}} us/cycle)")
"""


def bench_end_to_end(cycles):
    print(f"\nend-to-end single-asset device, {cycles} cycles per backend",
          flush=True)
    for pure in ("0", "1"):
        env = dict(os.environ, CYCLAB_PURE=pure)
        subprocess.run(
            [sys.executable, "-c", END_TO_END.format(cycles=cycles)],
            env=env, check=True,
        )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=200_000)
    parser.add_argument("--width", type=int, default=8)
    parser.add_argument("--cycles", type=int, default=20_000,
                        help="end-to-end device cycles per backend")
    args = parser.parse_args()
    if _core is None:
        print("note: compiled extension not available; "
              "python timings only", file=sys.stderr)
    bench_kernels(args.iterations, args.width)
    bench_end_to_end(args.cycles)


if __name__ == "__main__":
    main()
