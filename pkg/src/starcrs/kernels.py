"""Hot inner loops with numba-compiled and pure-numpy implementations.

Only two loops in this package are genuinely hot: rasterizing glyphs onto
screen pages (one write per character) and the per-edge scatter-add used by
the relational graph layers. Everything matmul-shaped stays on numpy/BLAS.

Backend selection: numba is used when importable unless ``STARCRS_NUMBA=0``
is set in the environment. Both backends apply updates in identical order,
so results are bit-identical.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _blit_glyphs_py(pages, page_idx, row_px, col_px, glyph_ids, glyph_table, fg):
    n = page_idx.shape[0]
    gh = glyph_table.shape[1]
    gw = glyph_table.shape[2]
    for k in range(n):
        g = glyph_table[glyph_ids[k]]
        p = page_idx[k]
        r0 = row_px[k]
        c0 = col_px[k]
        for r in range(gh):
            for c in range(gw):
                if g[r, c]:
                    pages[p, r0 + r, c0 + c] = fg


def _scatter_add_rows_py(out, dst_idx, src, src_idx):
    n = dst_idx.shape[0]
    d = src.shape[1]
    for k in range(n):
        s = src_idx[k]
        t = dst_idx[k]
        for j in range(d):
            out[t, j] += src[s, j]


_blit_glyphs_nb = njit(cache=True)(_blit_glyphs_py)
_scatter_add_rows_nb = njit(cache=True)(_scatter_add_rows_py)

_BACKEND = "numpy"


def set_backend(name: str) -> str:
    """Select 'numba' or 'numpy'. Returns the backend actually in effect."""
    global _BACKEND
    if name == "numba" and not _HAVE_NUMBA:
        name = "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    _BACKEND = name
    return _BACKEND


def backend() -> str:
    return _BACKEND


def blit_glyphs(pages, page_idx, row_px, col_px, glyph_ids, glyph_table, fg):
    """Write glyph bitmaps into a (pages, H, W) stack at pixel positions."""
    if _BACKEND == "numba":
        _blit_glyphs_nb(pages, page_idx, row_px, col_px, glyph_ids, glyph_table, fg)
    else:
        _blit_glyphs_py(pages, page_idx, row_px, col_px, glyph_ids, glyph_table, fg)


def scatter_add_rows(out, dst_idx, src, src_idx):
    """out[dst_idx[k]] += src[src_idx[k]] for k in edge order."""
    if _BACKEND == "numba":
        _scatter_add_rows_nb(out, dst_idx, src, src_idx)
    else:
        # np.add.at applies updates in index order, matching the jit loop.
        np.add.at(out, dst_idx, src[src_idx])


set_backend("numpy" if os.environ.get("STARCRS_NUMBA", "1") == "0" else "numba")
