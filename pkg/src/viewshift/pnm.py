"""Binary PPM (P6) and PGM (P5) readers and writers.

Three fixed on-disk encodings:

* images: P6, maxval 255, 8-bit RGB;
* depth maps: P5, maxval 65535, 16-bit big-endian samples, value 0 =
  invalid, meters = value * depth_scale;
* occlusion masks: P5, maxval 255, bytes straight from ``MaskFlag``.

Writers emit a canonical header (``P6\\n<w> <h>\\n<maxval>\\n``) so output
files are byte-reproducible; readers accept any standards-conforming
whitespace and ``#`` comments.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError


def _read_tokens(data: bytes, count: int, path: str) -> tuple[list[bytes], int]:
    """Pull `count` whitespace-delimited header tokens, skipping comments.

    Returns the tokens and the offset of the first payload byte (one
    whitespace byte after the last token, per the PNM spec).
    """
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated header")
        tokens.append(data[start:i])
    if i >= n:
        raise FormatError(f"{path}: missing payload")
    return tokens, i + 1


def _parse_header(data: bytes, magic: bytes, path: str) -> tuple[int, int, int, int]:
    tokens, offset = _read_tokens(data, 4, path)
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} file, found {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field") from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, maxval, offset


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM."""
    p = np.asarray(pixels)
    if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
        raise FormatError(f"PPM payload must be (H, W, 3) uint8, got {p.shape} {p.dtype}")
    h, w = p.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(p.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    w, h, maxval, offset = _parse_header(data, b"P6", str(path))
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    payload = data[offset : offset + w * h * 3]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pgm16(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write an (H, W) uint16 array as binary PGM with big-endian samples."""
    v = np.asarray(values)
    if v.ndim != 2 or v.dtype != np.uint16:
        raise FormatError(f"16-bit PGM payload must be (H, W) uint16, got {v.shape} {v.dtype}")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (w, h))
        f.write(v.astype(">u2").tobytes())


def read_pgm16(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    w, h, maxval, offset = _parse_header(data, b"P5", str(path))
    if maxval != 65535:
        raise FormatError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    payload = data[offset : offset + w * h * 2]
    if len(payload) != w * h * 2:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {w * h * 2}")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w).astype(np.uint16)


def write_pgm8(path: str | os.PathLike, values: np.ndarray) -> None:
    """Write an (H, W) uint8 array as binary PGM (used for masks)."""
    v = np.asarray(values)
    if v.ndim != 2 or v.dtype != np.uint8:
        raise FormatError(f"8-bit PGM payload must be (H, W) uint8, got {v.shape} {v.dtype}")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(v.tobytes())


def read_pgm8(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    w, h, maxval, offset = _parse_header(data, b"P5", str(path))
    if maxval != 255:
        raise FormatError(f"{path}: expected 8-bit PGM (maxval 255), got {maxval}")
    payload = data[offset : offset + w * h]
    if len(payload) != w * h:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()
