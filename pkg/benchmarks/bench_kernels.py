"""Benchmark the compiled t-SNE kernels against the pure-Python fallback.

Run:  python3 benchmarks/bench_kernels.py [n_points] [dims]

The compiled backend is what `sociospec.kernels` selects by default; the
fallback is what you get with SOCIOSPEC_PURE_PYTHON=1 or when the
extension fails to build. Both are timed on identical inputs and checked
for agreement.
"""

import sys
import time

import numpy as np

from sociospec import _kernels_py as pure
from sociospec import kernels


def _time(fn, *args, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, out


def main() -> None:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 600
    d = int(sys.argv[2]) if len(sys.argv) > 2 else 32
    rng = np.random.default_rng(0)
    points = np.ascontiguousarray(rng.normal(size=(n, d)))

    if kernels.BACKEND == "python":
        print("note: compiled backend unavailable; comparing python to itself")
    print(f"n={n} d={d}  (selected backend: {kernels.BACKEND})\n")
    print(f"{'kernel':<18}{'compiled':>12}{'pure':>12}{'speedup':>10}")

    t_c, dists = _time(kernels.pairwise_sq_dists, points)
    t_p, dists_p = _time(pure.pairwise_sq_dists, points)
    assert np.allclose(dists, dists_p, atol=1e-10)
    print(f"{'pairwise_sq_dists':<18}{t_c:>11.4f}s{t_p:>11.4f}s{t_p / t_c:>9.1f}x")

    t_c, cond = _time(kernels.affinity_search, dists, 30.0)
    t_p, cond_p = _time(pure.affinity_search, dists_p, 30.0)
    assert np.allclose(cond, cond_p, atol=1e-10)
    print(f"{'affinity_search':<18}{t_c:>11.4f}s{t_p:>11.4f}s{t_p / t_c:>9.1f}x")

    p = (cond + cond.T) / (2.0 * n)
    p = np.ascontiguousarray(p / p.sum())
    y = np.ascontiguousarray(rng.normal(scale=1e-4, size=(n, 2)))
    t_c, (grad, kl) = _time(kernels.tsne_gradient, p, y)
    t_p, (grad_p, kl_p) = _time(pure.tsne_gradient, p, y)
    assert np.allclose(grad, grad_p, atol=1e-10) and abs(kl - kl_p) < 1e-10
    print(f"{'tsne_gradient':<18}{t_c:>11.4f}s{t_p:>11.4f}s{t_p / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
