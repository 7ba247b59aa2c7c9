"""Minimal lossless PNG writer (8-bit RGB, no filtering)."""

import struct
import zlib

import numpy as np


def _chunk(kind, data):
    body = kind + data
    return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)


def png_bytes(image):
    """image: (3, H, W) or (H, W, 3) floats in [0, 1], or uint8."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[2] != 3:
        img = img.transpose(1, 2, 0)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = img.shape
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))
    return (b"\x89PNG\r\n\x1a\n"
            + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + _chunk(b"IDAT", zlib.compress(raw, 9))
            + _chunk(b"IEND", b""))


def write_png(path, image):
    try:
        with open(path, "wb") as f:
            f.write(png_bytes(image))
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


def upscale(image, factor):
    """Nearest-neighbour enlargement of a (C, H, W) image."""
    return np.repeat(np.repeat(image, factor, axis=-2), factor, axis=-1)
