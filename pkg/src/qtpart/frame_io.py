"""8-bit luma frame I/O, CTU tiling and causal reference extraction.

Frames are single-plane 8-bit arrays. Two on-disk formats are supported:
binary PGM (P5, maxval 255) and headerless raw luma with caller-supplied
dimensions. Frames are tiled into coding-tree-unit squares in raster
order; tiles sticking out past the border are cropped and flagged so the
quadtree code can skip them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

BORDER_FILL = 128   # substitute for unavailable reference samples
REF_BORDER = 4      # causal reference rows/columns kept per side
MIN_FRAME_SIDE = 8
CTU_SIZES = (32, 64, 128)


class FrameFormatError(ValueError):
    """Malformed or inconsistent frame file."""


@dataclass(frozen=True)
class Rect:
    """Pixel rectangle: top-left corner plus size."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class CtuTile:
    rect: Rect
    cropped: bool


class LumaFrame:
    """Immutable single-plane 8-bit frame."""

    def __init__(self, pixels: np.ndarray):
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise FrameFormatError("frame must be a non-empty 2-D array")
        arr.flags.writeable = False
        self._pix = arr

    @property
    def pixels(self) -> np.ndarray:
        return self._pix

    @property
    def width(self) -> int:
        return self._pix.shape[1]

    @property
    def height(self) -> int:
        return self._pix.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, LumaFrame) and np.array_equal(self._pix, other._pix)


@dataclass
class CausalPatch:
    """A block with its causal reference strips.

    ``cu`` is the h x w block itself. ``top`` holds the REF_BORDER rows
    directly above, ``left`` the REF_BORDER columns directly to the left
    and ``corner`` the square where the two strips meet. Reference pixels
    that fall outside the frame, or that have not been reconstructed yet,
    are replaced by BORDER_FILL; a strip's availability flag is set only
    when every one of its pixels is genuine.
    """

    cu: np.ndarray
    top: np.ndarray
    left: np.ndarray
    corner: np.ndarray
    top_available: bool
    left_available: bool
    corner_available: bool


def load_frame(path: str | Path, fmt: str = "pgm8",
               width: int | None = None, height: int | None = None) -> LumaFrame:
    """Read a frame from disk.

    Args:
        path: file to read.
        fmt: "pgm8" for binary PGM, "rawy" for headerless 8-bit luma.
        width, height: required for "rawy", ignored otherwise.
    """
    data = Path(path).read_bytes()
    if fmt == "pgm8":
        return _parse_pgm(data)
    if fmt == "rawy":
        if not width or not height:
            raise FrameFormatError("rawy format needs explicit width and height")
        if len(data) != width * height:
            raise FrameFormatError(
                f"rawy size mismatch: {len(data)} bytes for {width}x{height}")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
        return LumaFrame(arr)
    raise FrameFormatError(f"unknown frame format {fmt!r}")


def save_pgm(frame: LumaFrame, path: str | Path) -> None:
    """Write a canonical binary PGM (single-space header, maxval 255)."""
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + frame.pixels.tobytes())


def _parse_pgm(data: bytes) -> LumaFrame:
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":                      # comment runs to end of line
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FrameFormatError("truncated PGM header")
        return data[start:pos]

    if next_token() != b"P5":
        raise FrameFormatError("not a binary PGM (P5) file")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except FrameFormatError:
        raise
    except ValueError as exc:
        raise FrameFormatError("non-numeric PGM header field") from exc
    if maxval != 255:
        raise FrameFormatError(f"unsupported PGM maxval {maxval}")
    if width <= 0 or height <= 0:
        raise FrameFormatError("non-positive PGM dimensions")
    pos += 1                                   # single whitespace before raster
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FrameFormatError("PGM raster shorter than header promises")
    return LumaFrame(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def tile_ctus(frame: LumaFrame, ctu: int) -> list[CtuTile]:
    """Cover the frame with ctu x ctu tiles in raster order.

    Border tiles that stick out are cropped to the frame and flagged.
    """
    if ctu not in CTU_SIZES:
        raise ValueError(f"ctu must be one of {CTU_SIZES}")
    if frame.width < MIN_FRAME_SIDE or frame.height < MIN_FRAME_SIDE:
        raise FrameFormatError("frame smaller than 8x8")
    tiles = []
    for y in range(0, frame.height, ctu):
        for x in range(0, frame.width, ctu):
            w = min(ctu, frame.width - x)
            h = min(ctu, frame.height - y)
            tiles.append(CtuTile(Rect(x, y, w, h), cropped=(w < ctu or h < ctu)))
    return tiles


def _grab(pix: np.ndarray, mask: np.ndarray | None,
          y0: int, y1: int, x0: int, x1: int) -> tuple[np.ndarray, bool]:
    """Copy [y0:y1, x0:x1] substituting BORDER_FILL where off-frame or
    not yet reconstructed. Returns (block, fully_available)."""
    h, w = y1 - y0, x1 - x0
    out = np.full((h, w), BORDER_FILL, dtype=np.uint8)
    iy0, iy1 = max(y0, 0), min(y1, pix.shape[0])
    ix0, ix1 = max(x0, 0), min(x1, pix.shape[1])
    if iy1 <= iy0 or ix1 <= ix0:
        return out, False
    inside = iy0 == y0 and iy1 == y1 and ix0 == x0 and ix1 == x1
    sub = pix[iy0:iy1, ix0:ix1]
    if mask is None:
        return out, False
    avail = mask[iy0:iy1, ix0:ix1]
    view = out[iy0 - y0:iy1 - y0, ix0 - x0:ix1 - x0]
    view[avail] = sub[avail]
    return out, inside and bool(avail.all())


def causal_patch(frame: LumaFrame | np.ndarray, rect: Rect,
                 encoded_mask: np.ndarray | None = None) -> CausalPatch:
    """Extract a block and its causal reference strips.

    ``frame`` is the working picture (source pixels progressively replaced
    by reconstructions); ``encoded_mask`` marks pixels that have been
    reconstructed and may serve as references. With no mask every
    reference is treated as unavailable. Never reads pixels to the right
    of or below the block's own rows and columns.
    """
    pix = frame.pixels if isinstance(frame, LumaFrame) else np.asarray(frame)
    if rect.x < 0 or rect.y < 0 or rect.x + rect.w > pix.shape[1] \
            or rect.y + rect.h > pix.shape[0]:
        raise ValueError(f"rect {rect} outside frame {pix.shape}")
    cu = pix[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w].copy()
    b = REF_BORDER
    top, top_ok = _grab(pix, encoded_mask, rect.y - b, rect.y, rect.x, rect.x + rect.w)
    left, left_ok = _grab(pix, encoded_mask, rect.y, rect.y + rect.h, rect.x - b, rect.x)
    corner, corner_ok = _grab(pix, encoded_mask, rect.y - b, rect.y, rect.x - b, rect.x)
    return CausalPatch(cu=cu, top=top, left=left, corner=corner,
                       top_available=top_ok, left_available=left_ok,
                       corner_available=corner_ok)
