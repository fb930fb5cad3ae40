#!/usr/bin/env python3
"""Compare the compiled scan kernels against the numpy fallback.

Times the attention scan (the hot loop of every interaction round) and the
mean-vector scan over synthetic galleries of increasing size, then an
end-to-end episode throughput comparison with each backend forced.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from objseek._kernels import backends


def synth_arrays(rng, n, m, dim):
    regions = rng.standard_normal((n, m, dim))
    regions /= np.linalg.norm(regions, axis=2, keepdims=True)
    counts = np.full(n, m, dtype=np.int32)
    query = rng.standard_normal(dim)
    query /= np.linalg.norm(query)
    return np.ascontiguousarray(regions), counts, np.ascontiguousarray(query)


def time_fn(fn, *args, repeats=200):
    fn(*args)  # warm up
    best = np.inf
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def bench_kernels(quick=False):
    impls = backends()
    if "fast" not in impls:
        print("compiled backend not built; only timing the numpy fallback")
    rng = np.random.default_rng(0)
    sizes = [(400, 8, 32), (2000, 8, 32)] if quick else \
            [(400, 8, 32), (2000, 8, 32), (2000, 36, 256), (20000, 8, 32)]
    print(f"{'gallery':>16} {'kernel':>8} " +
          " ".join(f"{name:>12}" for name in impls) + f" {'speedup':>8}")
    for n, m, dim in sizes:
        regions, counts, query = synth_arrays(rng, n, m, dim)
        vectors = np.ascontiguousarray(regions.mean(axis=1))
        for kernel, args in (("sscan", (regions, counts, query)),
                             ("dot", (vectors, query))):
            times = {name: time_fn(getattr(impl, f"{kernel}_scores"), *args,
                                   repeats=50 if n >= 20000 else 200)
                     for name, impl in impls.items()}
            speedup = times["pure"] / times["fast"] if "fast" in times else float("nan")
            print(f"{f'{n}x{m}x{dim}':>16} {kernel:>8} " +
                  " ".join(f"{times[name] * 1e6:>10.1f}us" for name in impls) +
                  f" {speedup:>7.2f}x")


def bench_episodes(quick=False):
    """Episode throughput with each backend forced in a subprocess."""
    n = 500 if quick else 2000
    code = f"""
import time
import numpy as np
from objseek import _kernels
from objseek.gallery import generate_synthetic
from objseek.interaction import QASimPolicy, run_episode
from objseek.ranker import GalleryView

ds = generate_synthetic({n}, 100, 32, 8, (3, 6), 10, 0.15, seed=1)
view = GalleryView(ds)
rng = np.random.default_rng(0)
targets = [ds.images[int(i)].id for i in rng.integers(0, ds.n_images, size=30)]
start = time.perf_counter()
rounds = 0
for t in targets:
    trace = run_episode(ds, t, QASimPolicy(), view=view, n_actions=10,
                        max_rounds=10, seed=0)
    rounds += len(trace.rounds) - 1
elapsed = time.perf_counter() - start
print(f"{{_kernels.backend_name()}}: {{rounds / elapsed:.0f}} rounds/s "
      f"({{1000 * elapsed / rounds:.2f}} ms/round)")
"""
    print(f"\nepisode throughput ({n}-image gallery, 30 episodes x 10 rounds):")
    for backend in ("fast", "pure"):
        env = dict(os.environ, OBJSEEK_KERNELS=backend)
        result = subprocess.run([sys.executable, "-c", code], env=env,
                                capture_output=True, text=True)
        if result.returncode:
            print(f"{backend}: unavailable ({result.stderr.strip().splitlines()[-1]})")
        else:
            print(result.stdout.strip())


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="small grid only")
    args = parser.parse_args()
    bench_kernels(args.quick)
    bench_episodes(args.quick)
