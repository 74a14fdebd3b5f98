"""Compare the compiled kernel backend against the pure-NumPy fallback.

Times the three kernel operations at the batch sizes that matter in practice:
single-row prediction, fine-tuning batches, meta-training batches, and the
planner's trajectory batches. Run as::

    python benchmarks/bench_backends.py [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lhpo.backend import numpy_ops

try:
    from lhpo.backend import _core
except ImportError:
    _core = None


def make_layers(rng, shapes):
    return [(rng.standard_normal(s), rng.standard_normal(s[1])) for s in shapes]


def time_op(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best * 1e6  # microseconds


def bench(backend, rows, shapes, repeats):
    rng = np.random.default_rng(0)
    layers = make_layers(rng, shapes)
    x = rng.standard_normal((rows, shapes[0][0]))
    fwd = time_op(lambda: backend.mlp_forward(layers, x), repeats)
    y, h1, h2 = backend.mlp_forward_cache(layers, x)
    dy = rng.standard_normal(y.shape)
    bwd = time_op(lambda: backend.mlp_backward(layers, x, h1, h2, dy), repeats)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if _core is None:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
        return

    shapes = [(68, 64), (64, 64), (64, 2)]  # head network at default widths
    print(f"{'rows':>6} | {'numpy fwd':>10} {'cython fwd':>10} {'speedup':>7} | "
          f"{'numpy bwd':>10} {'cython bwd':>10} {'speedup':>7}")
    for rows in (1, 16, 64, 256, 1024, 4096):
        repeats = max(10, min(args.repeats, 400_000 // max(rows, 1)))
        nf, nb = bench(numpy_ops, rows, shapes, repeats)
        cf, cb = bench(_core, rows, shapes, repeats)
        print(f"{rows:>6} | {nf:>9.1f}u {cf:>9.1f}u {nf / cf:>6.2f}x | "
              f"{nb:>9.1f}u {cb:>9.1f}u {nb / cb:>6.2f}x")


if __name__ == "__main__":
    main()
