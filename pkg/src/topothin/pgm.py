"""PGM (P2 ASCII / P5 binary) reading and canonical writing.

Canonical output, which the writer always produces and the reader
round-trips byte for byte::

    P5\\n<width> <height>\\n<maxval>\\n<raster>

P5 rasters are one unpadded byte per pixel. P2 rasters have one
scanline per line with values separated by single spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import GrayImage

_WS = b" \t\n\r\v\f"


class PgmError(ValueError):
    """Malformed PGM data; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class PgmMagicError(PgmError):
    pass


class PgmHeaderError(PgmError):
    pass


class PgmMaxvalError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


class PgmTrailingDataError(PgmError):
    pass


@dataclass(frozen=True)
class PgmVariant:
    format: str = "P5"
    maxval: int = 255

    def __post_init__(self) -> None:
        if self.format not in ("P2", "P5"):
            raise ValueError(f"unsupported PGM format {self.format!r}")
        if not 1 <= self.maxval <= 255:
            raise ValueError(f"maxval must be in [1, 255], got {self.maxval}")


class _Tokens:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def skip_space(self) -> None:
        d = self.data
        while self.pos < len(d):
            c = d[self.pos]
            if c in _WS:
                self.pos += 1
            elif c == 0x23:  # '#' comment runs to end of line
                while self.pos < len(d) and d[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def integer(self, what: str) -> int:
        self.skip_space()
        start = self.pos
        d = self.data
        while self.pos < len(d) and 0x30 <= d[self.pos] <= 0x39:
            self.pos += 1
        if self.pos == start:
            if start >= len(d):
                raise PgmTruncatedError(f"missing {what}", start)
            raise PgmHeaderError(f"expected {what}, found byte {d[start]:#04x}", start)
        if self.pos < len(d) and d[self.pos] not in _WS and d[self.pos] != 0x23:
            raise PgmHeaderError(f"junk after {what}", self.pos)
        return int(d[start:self.pos])


def read_pgm_with_variant(data: bytes) -> tuple[GrayImage, PgmVariant]:
    if len(data) < 2:
        raise PgmMagicError("missing magic number", 0)
    magic = bytes(data[:2])
    if magic not in (b"P2", b"P5"):
        raise PgmMagicError(f"bad magic {magic!r}", 0)
    tok = _Tokens(data, 2)
    if tok.pos < len(data) and data[tok.pos] not in _WS and data[tok.pos] != 0x23:
        raise PgmMagicError("magic number not followed by whitespace", 2)
    width_at = tok.pos
    width = tok.integer("width")
    height = tok.integer("height")
    if width < 1 or height < 1:
        raise PgmHeaderError(f"bad dimensions {width}x{height}", width_at)
    tok.skip_space()
    maxval_at = tok.pos
    maxval = tok.integer("maxval")
    if not 1 <= maxval <= 255:
        raise PgmMaxvalError(f"maxval {maxval} outside [1, 255]", maxval_at)
    n = width * height
    if magic == b"P5":
        if tok.pos >= len(data):
            raise PgmTruncatedError("missing whitespace before raster", tok.pos)
        if data[tok.pos] not in _WS:
            raise PgmHeaderError("maxval must be followed by one whitespace byte", tok.pos)
        start = tok.pos + 1  # exactly one whitespace byte
        end = start + n
        if end > len(data):
            raise PgmTruncatedError(f"raster needs {n} bytes, {len(data) - start} present", len(data))
        if end < len(data):
            raise PgmTrailingDataError(f"{len(data) - end} bytes after raster", end)
        vals = np.frombuffer(data, dtype=np.uint8, count=n, offset=start)
        over = np.flatnonzero(vals > maxval)
        if over.size:
            raise PgmMaxvalError(f"pixel value {vals[over[0]]} exceeds maxval {maxval}", start + int(over[0]))
    else:
        vals = np.empty(n, dtype=np.uint8)
        for i in range(n):
            tok.skip_space()
            at = tok.pos
            v = tok.integer(f"pixel {i}")
            if v > maxval:
                raise PgmMaxvalError(f"pixel value {v} exceeds maxval {maxval}", at)
            vals[i] = v
        tok.skip_space()
        if tok.pos != len(data):
            raise PgmTrailingDataError("data after last pixel", tok.pos)
    return GrayImage(vals.reshape(height, width)), PgmVariant(magic.decode(), maxval)


def read_pgm(data: bytes) -> GrayImage:
    return read_pgm_with_variant(data)[0]


def write_pgm(img: GrayImage, variant: PgmVariant = PgmVariant()) -> bytes:
    a = img.pixels
    if a.size and int(a.max()) > variant.maxval:
        raise ValueError(f"pixel value {int(a.max())} exceeds maxval {variant.maxval}")
    header = f"{variant.format}\n{img.width} {img.height}\n{variant.maxval}\n".encode("ascii")
    if variant.format == "P5":
        return header + a.tobytes()
    lines = (" ".join(str(int(v)) for v in row) for row in a)
    return header + ("\n".join(lines) + "\n").encode("ascii")


def load(path: str | Path) -> tuple[GrayImage, PgmVariant]:
    return read_pgm_with_variant(Path(path).read_bytes())


def save(path: str | Path, img: GrayImage, variant: PgmVariant = PgmVariant()) -> None:
    Path(path).write_bytes(write_pgm(img, variant))
