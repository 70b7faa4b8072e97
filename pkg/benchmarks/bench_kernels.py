"""Timing comparison of the two jit-compiled kernels against their
pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

The same workloads run on both backends; outputs are checked for exact
agreement before timing, so the numbers compare identical work.
"""

import argparse
import time

import numpy as np

from starcrs import kernels
from starcrs.font5x7 import GLYPH_TABLE


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_blit(repeats):
    rng = np.random.default_rng(0)
    n_chars = 20000
    pages = np.zeros((40, 128, 128), dtype=np.float32)
    page_idx = rng.integers(0, 40, n_chars).astype(np.int64)
    row_px = rng.integers(0, 128 - 8, n_chars).astype(np.int64)
    col_px = rng.integers(0, 128 - 6, n_chars).astype(np.int64)
    glyph_ids = rng.integers(0, GLYPH_TABLE.shape[0], n_chars).astype(np.int64)

    def run():
        pages.fill(0.0)
        kernels.blit_glyphs(pages, page_idx, row_px, col_px, glyph_ids,
                            GLYPH_TABLE, 1.0)

    outs = {}
    times = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        run()  # warm-up also triggers jit compilation
        outs[kernels.backend()] = pages.copy()
        times[kernels.backend()] = _time(run, repeats)
    if len(outs) == 2:
        assert np.array_equal(outs["numpy"], outs["numba"]), \
            "backends disagree on blit output"
    return f"blit_glyphs {n_chars} chars", times


def bench_scatter(repeats):
    rng = np.random.default_rng(1)
    n_edges = 200000
    n_rows, d = 512, 64
    src = rng.standard_normal((n_rows, d)).astype(np.float64)
    dst_idx = rng.integers(0, n_rows, n_edges).astype(np.int64)
    src_idx = rng.integers(0, n_rows, n_edges).astype(np.int64)
    out = np.zeros((n_rows, d))

    def run():
        out.fill(0.0)
        kernels.scatter_add_rows(out, dst_idx, src, src_idx)

    outs = {}
    times = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        run()
        outs[kernels.backend()] = out.copy()
        times[kernels.backend()] = _time(run, repeats)
    if len(outs) == 2:
        assert np.allclose(outs["numpy"], outs["numba"], atol=1e-9), \
            "backends disagree on scatter output"
    return f"scatter_add_rows {n_edges} edges d={d}", times


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    original = kernels.backend()
    try:
        for bench in (bench_blit, bench_scatter):
            label, times = bench(args.repeats)
            np_t = times.get("numpy")
            nb_t = times.get("numba")
            line = f"{label}: numpy {np_t * 1e3:8.2f} ms"
            if nb_t is not None and "numba" in times:
                line += f"  numba {nb_t * 1e3:8.2f} ms  speedup {np_t / nb_t:6.1f}x"
            else:
                line += "  (numba unavailable, fallback only)"
            print(line)
    finally:
        kernels.set_backend(original)


if __name__ == "__main__":
    main()
