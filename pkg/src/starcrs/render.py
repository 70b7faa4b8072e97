"""Deterministic rasterization of text into fixed-size binary screen pages.

Characters are laid out row-major in fixed glyph cells with hard wrapping at
the column boundary; long inputs spill onto additional pages. All pixels are
exactly background or foreground, so repeated renders are byte-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import font5x7, kernels
from .errors import ConfigError

_GLYPH_ROW_OFF = 1  # glyph sits one pixel below the cell top
_GLYPH_COL_OFF = 0


@dataclass
class PageSpec:
    width_px: int = 128
    height_px: int = 128
    cell_w: int = 6
    cell_h: int = 10
    foreground: float = 1.0
    background: float = 0.0

    def __post_init__(self):
        problems = []
        if self.cell_w < font5x7.GLYPH_COLS + _GLYPH_COL_OFF:
            problems.append(f"cell_w {self.cell_w} cannot house a {font5x7.GLYPH_COLS}-wide glyph")
        if self.cell_h < font5x7.GLYPH_ROWS + _GLYPH_ROW_OFF:
            problems.append(f"cell_h {self.cell_h} cannot house a {font5x7.GLYPH_ROWS}-tall glyph")
        if not problems and (self.cols < 1 or self.rows < 1):
            problems.append(
                f"page {self.width_px}x{self.height_px} has zero capacity "
                f"with cell {self.cell_w}x{self.cell_h}")
        for g in (self.foreground, self.background):
            if not (0.0 <= g <= 1.0):
                problems.append(f"gray level {g} outside [0, 1]")
        if problems:
            raise ConfigError(problems)

    @property
    def cols(self) -> int:
        return self.width_px // self.cell_w

    @property
    def rows(self) -> int:
        return self.height_px // self.cell_h

    @property
    def capacity(self) -> int:
        return self.cols * self.rows


@dataclass
class ScreenPageSet:
    pages: np.ndarray  # (n_pages, height_px, width_px) float32
    source_hash: str
    spec: PageSpec = field(default_factory=PageSpec)

    @property
    def n_pages(self) -> int:
        return self.pages.shape[0]


def _normalize(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n").replace("\t", "    ")


def render_text(text: str, spec: PageSpec | None = None) -> ScreenPageSet:
    """Rasterize text onto one or more binary pages.

    Newlines advance to the next row; rows wrap hard at the column boundary;
    a full page opens a new one. Pages are only allocated once a glyph lands
    on them, so plain text of length n needs exactly max(1, ceil(n/capacity))
    pages.
    """
    if spec is None:
        spec = PageSpec()
    normalized = _normalize(text)
    page_idx, row_px, col_px, glyph_ids = [], [], [], []
    page, row, col = 0, 0, 0
    for ch in normalized:
        if ch == "\n":
            row += 1
            col = 0
            if row >= spec.rows:
                page += 1
                row = 0
            continue
        page_idx.append(page)
        row_px.append(row * spec.cell_h + _GLYPH_ROW_OFF)
        col_px.append(col * spec.cell_w + _GLYPH_COL_OFF)
        glyph_ids.append(font5x7.glyph_index(ch))
        col += 1
        if col >= spec.cols:
            col = 0
            row += 1
            if row >= spec.rows:
                page += 1
                row = 0
    n_pages = max(1, page_idx[-1] + 1 if page_idx else 1)
    pages = np.full((n_pages, spec.height_px, spec.width_px),
                    spec.background, dtype=np.float32)
    if page_idx:
        kernels.blit_glyphs(pages,
                            np.asarray(page_idx, dtype=np.int64),
                            np.asarray(row_px, dtype=np.int64),
                            np.asarray(col_px, dtype=np.int64),
                            np.asarray(glyph_ids, dtype=np.int64),
                            font5x7.GLYPH_TABLE, spec.foreground)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ScreenPageSet(pages=pages, source_hash=digest, spec=spec)


def to_pgm(page: np.ndarray) -> bytes:
    """Encode one page as a binary PGM (P5) image."""
    h, w = page.shape
    levels = np.clip(np.rint(page * 255), 0, 255).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + levels.tobytes()


def save_pages_pgm(pageset: ScreenPageSet, path_prefix: str) -> list:
    paths = []
    for i in range(pageset.n_pages):
        path = f"{path_prefix}_{i:03d}.pgm"
        with open(path, "wb") as fh:
            fh.write(to_pgm(pageset.pages[i]))
        paths.append(path)
    return paths
