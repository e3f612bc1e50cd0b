"""Benchmark the compiled decode-step kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--iters N] [--sizes 1024,8192,50304]

One guided step = apply the topic/constraint indicators to the base
logits, softmax, and argmax. This is the per-token hot path of the
decoding loop, so per-call latency translates directly into tokens/s
for mock-model decodes (real-model decodes are dominated by the model
forward instead).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from guided_decode.kernels import fallback

try:
    from guided_decode.kernels import _core
except ImportError:
    _core = None


def bench_one(impl, size: int, iters: int, rng: np.random.Generator) -> float:
    base = rng.normal(size=size)
    topic = np.sort(rng.choice(size, size=20, replace=False)).astype(np.int64)
    constraint = np.sort(rng.choice(size, size=40, replace=False)).astype(np.int64)
    impl.guided_step(base, topic, constraint, 5.0, 100.0)  # warm up
    started = time.perf_counter()
    for _ in range(iters):
        impl.guided_step(base, topic, constraint, 5.0, 100.0)
    return (time.perf_counter() - started) / iters


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iters", type=int, default=2000, help="guided steps per measurement")
    parser.add_argument(
        "--sizes",
        default="1024,8192,50304",
        help="comma-separated vocabulary sizes",
    )
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    print(f"{'|V|':>8}  {'python':>12}  {'compiled':>12}  {'speedup':>8}")
    for size in sizes:
        py = bench_one(fallback, size, args.iters, rng)
        row = f"{size:>8}  {py * 1e6:>10.1f}us"
        if _core is None:
            row += f"  {'unavailable':>12}  {'-':>8}"
        else:
            cy = bench_one(_core, size, args.iters, rng)
            row += f"  {cy * 1e6:>10.1f}us  {py / cy:>7.2f}x"
        print(row)

    if _core is not None:
        base = rng.normal(size=sizes[0])
        topic = np.array([1, 5], dtype=np.int64)
        constraint = np.array([2], dtype=np.int64)
        p_py, c_py = fallback.guided_step(base, topic, constraint, 5.0, 100.0)
        p_cy, c_cy = _core.guided_step(base, topic, constraint, 5.0, 100.0)
        agree = c_py == c_cy and float(np.abs(p_py - p_cy).max()) < 1e-14
        print(f"\nbackends agree on a spot check: {agree}")


if __name__ == "__main__":
    main()
