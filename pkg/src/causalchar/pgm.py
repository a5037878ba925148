"""Binary PGM (P5, maxval 255) reading and writing."""
from __future__ import annotations

import numpy as np

from .errors import FormatError

_WS = b" \t\r\n"


def _token(buf, pos):
    """Next header token and the position after it; skips whitespace and comments."""
    n = len(buf)
    while pos < n:
        if buf[pos] in _WS:
            pos += 1
        elif buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of PGM header at byte {start}", offset=start)
    return buf[start:pos], start, pos


def parse_pgm(buf: bytes) -> np.ndarray:
    magic, off, pos = _token(buf, 0)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM: magic {magic!r} at byte {off}", offset=off)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, off, pos = _token(buf, pos)
        if not tok.isdigit() or int(tok) <= 0:
            raise FormatError(f"bad PGM {name} {tok!r} at byte {off}", offset=off)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} at byte {off}", offset=off)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise FormatError(f"missing whitespace after PGM header at byte {pos}", offset=pos)
    pos += 1
    need = width * height
    if len(buf) - pos < need:
        raise FormatError(
            f"PGM pixel data truncated at byte {len(buf)} (need {need} bytes from byte {pos})",
            offset=len(buf),
        )
    return np.frombuffer(buf, np.uint8, need, pos).reshape(height, width).copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def write_pgm(path, pixels: np.ndarray):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise TypeError("PGM pixels must be uint8")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels).tobytes())
