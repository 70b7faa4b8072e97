"""Embedded 5x7 monospace bitmap font for the screen renderer.

Each printable ASCII character (0x20..0x7E) is five column bytes; bit r of
column byte c (least significant bit = top row) lights pixel (r, c) of the
7-row by 5-column glyph. Everything else maps to a checkerboard replacement
glyph. The table is embedded so rendering is bit-exact on any host.
"""

from __future__ import annotations

import numpy as np

# code point : five column bytes as hex
_TABLE = """
20:0000000000 21:00005F0000 22:0007000700 23:147F147F14 24:242A7F2A12
25:2313086462 26:3649552250 27:0005030000 28:001C224100 29:0041221C00
2A:082A1C2A08 2B:08083E0808 2C:0050300000 2D:0808080808 2E:0060600000
2F:2010080402 30:3E5149453E 31:00427F4000 32:4261514946 33:2141454B31
34:1814127F10 35:2745454539 36:3C4A494930 37:0171090503 38:3649494936
39:064949291E 3A:0036360000 3B:0056360000 3C:0008142241 3D:1414141414
3E:4122140800 3F:0201510906 40:324979413E 41:7E1111117E 42:7F49494936
43:3E41414122 44:7F4141221C 45:7F49494941 46:7F09090101 47:3E41415132
48:7F0808087F 49:00417F4100 4A:2040413F01 4B:7F08142241 4C:7F40404040
4D:7F0204027F 4E:7F0408107F 4F:3E4141413E 50:7F09090906 51:3E4151215E
52:7F09192946 53:4649494931 54:01017F0101 55:3F4040403F 56:1F2040201F
57:7F2018207F 58:6314081463 59:0304780403 5A:6151494543 5B:007F414100
5C:0204081020 5D:0041417F00 5E:0402010204 5F:4040404040 60:0001020400
61:2054545478 62:7F48444438 63:3844444420 64:384444487F 65:3854545418
66:087E090102 67:081454543C 68:7F08040478 69:00447D4000 6A:2040443D00
6B:007F102844 6C:00417F4000 6D:7C04180478 6E:7C08040478 6F:3844444438
70:7C14141408 71:081414187C 72:7C08040408 73:4854545420 74:043F444020
75:3C4040207C 76:1C2040201C 77:3C4030403C 78:4428102844 79:0C5050503C
7A:4464544C44 7B:0008364100 7C:00007F0000 7D:0041360800 7E:08082A1C08
"""

REPLACEMENT_COLUMNS = (0x55, 0x2A, 0x55, 0x2A, 0x55)

GLYPH_ROWS, GLYPH_COLS = 7, 5


def _columns_to_bitmap(cols) -> np.ndarray:
    bm = np.zeros((GLYPH_ROWS, GLYPH_COLS), dtype=np.float32)
    for c, byte in enumerate(cols):
        for r in range(GLYPH_ROWS):
            if byte >> r & 1:
                bm[r, c] = 1.0
    return bm


def _build():
    entries = {}
    for chunk in _TABLE.split():
        code, hexcols = chunk.split(":")
        cols = tuple(int(hexcols[i:i + 2], 16) for i in range(0, 10, 2))
        entries[int(code, 16)] = cols
    table = np.zeros((96, GLYPH_ROWS, GLYPH_COLS), dtype=np.float32)
    for code, cols in entries.items():
        table[code - 0x20] = _columns_to_bitmap(cols)
    table[95] = _columns_to_bitmap(REPLACEMENT_COLUMNS)
    table.setflags(write=False)
    return table


GLYPH_TABLE = _build()
REPLACEMENT_INDEX = 95


def glyph_index(ch: str) -> int:
    """Index into GLYPH_TABLE for a character (replacement for non-ASCII)."""
    code = ord(ch)
    if 0x20 <= code <= 0x7E:
        return code - 0x20
    return REPLACEMENT_INDEX


def glyph_of(ch: str) -> np.ndarray:
    """7x5 binary bitmap for a character; read-only shared storage."""
    return GLYPH_TABLE[glyph_index(ch)]
