"""Binary PPM (P6) image files and the point-intensity colormap.

P6 keeps image IO dependency-free and byte-exact: header "P6", width,
height, maxval 255, then height*width*3 raw bytes, row-major, RGB order.
Comments (# to end of line) are legal between header tokens.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def format_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ImageFormatError(
            f"PPM wants a uint8 (H,W,3) array, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def parse_ppm(data: bytes) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("PPM header ended early")
        return data[start:pos]

    magic = token()
    if magic != b"P6":
        raise ImageFormatError(f"bad PPM magic {magic!r}, expected b'P6'")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise ImageFormatError(f"non-numeric PPM header field: {e}") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}, only 255")
    if w < 1 or h < 1:
        raise ImageFormatError(f"bad PPM dimensions {w}x{h}")
    pos += 1  # single whitespace byte separates header from pixel data
    need = w * h * 3
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ImageFormatError(
            f"truncated PPM payload: expected {need} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(format_ppm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_ppm(f.read())


def _build_colormap() -> np.ndarray:
    """256-entry intensity colormap: piecewise-linear through five stops.

    value   0 -> (  0,   0, 255)   blue
    value  64 -> (  0, 255, 255)   cyan
    value 128 -> (  0, 255,   0)   green
    value 192 -> (255, 255,   0)   yellow
    value 255 -> (255,   0,   0)   red
    """
    stops = np.array([0, 64, 128, 192, 255], dtype=np.float64)
    colors = np.array([[0, 0, 255], [0, 255, 255], [0, 255, 0],
                       [255, 255, 0], [255, 0, 0]], dtype=np.float64)
    values = np.arange(256, dtype=np.float64)
    table = np.empty((256, 3), dtype=np.uint8)
    for ch in range(3):
        table[:, ch] = np.rint(np.interp(values, stops, colors[:, ch])).astype(np.uint8)
    return table


INTENSITY_COLORMAP = _build_colormap()


def intensity_color(values: np.ndarray) -> np.ndarray:
    """Map intensities in [0,255] to RGB rows of INTENSITY_COLORMAP."""
    idx = np.clip(np.rint(np.asarray(values, dtype=np.float64)), 0, 255).astype(np.intp)
    return INTENSITY_COLORMAP[idx]
