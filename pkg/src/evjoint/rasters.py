"""EVR1 raster files and portable-pixmap renders."""
from __future__ import annotations

import os
import re
import struct

import numpy as np
from matplotlib.colors import hsv_to_rgb

from .metrics import normalize_robust

MAGIC = b"EVR1"
_HEADER = struct.Struct("<4sIII")
_PPM_HEADER = re.compile(rb"(P[56])\s+(\d+)\s+(\d+)\s+255\s")


class RasterFormatError(ValueError):
    pass


def raster_to_bytes(data: np.ndarray) -> bytes:
    """Serialize an ``(H, W)`` or ``(C, H, W)`` array as EVR1 (float32, channel-planar)."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or 0 in arr.shape:
        raise ValueError(f"raster must be (H, W) or (C, H, W) and non-empty, got {np.shape(data)}")
    c, h, w = arr.shape
    return _HEADER.pack(MAGIC, w, h, c) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def raster_from_bytes(buf: bytes) -> np.ndarray:
    """Parse EVR1 bytes into a float32 ``(C, H, W)`` array."""
    if len(buf) < _HEADER.size:
        raise RasterFormatError("truncated raster header")
    magic, w, h, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise RasterFormatError(f"bad raster magic {magic!r}")
    expected = _HEADER.size + 4 * c * h * w
    if len(buf) != expected:
        raise RasterFormatError(f"raster payload is {len(buf)} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(c, h, w).astype(np.float32)


def write_raster(path: str | os.PathLike, data: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(raster_to_bytes(data))


def read_raster(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return raster_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# Renders


def flow_wheel(flow: np.ndarray, max_mag: float | None = None) -> np.ndarray:
    """Color a ``(2, H, W)`` flow: hue is direction, saturation is magnitude.

    Saturation is ``|F| / max_mag`` clipped to 1, with ``max_mag`` defaulting
    to the 99th percentile of the magnitude. Zero flow renders white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must have shape (2, H, W), got {flow.shape}")
    u, v = flow
    mag = np.hypot(u, v)
    if max_mag is None:
        max_mag = float(np.percentile(mag, 99))
    elif not max_mag > 0:
        raise ValueError("max magnitude must be positive")
    sat = np.clip(mag / max_mag, 0.0, 1.0) if max_mag > 0 else np.zeros_like(mag)
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    rgb = hsv_to_rgb(np.stack([hue, sat, np.ones_like(mag)], axis=-1))
    return to_uint8(rgb)


def gray(L: np.ndarray) -> np.ndarray:
    """8-bit gray render of a log-intensity field through robust normalization."""
    return to_uint8(normalize_robust(L))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def ppm_bytes(img: np.ndarray) -> bytes:
    """Binary portable pixmap: P5 for ``(H, W)`` and P6 for ``(H, W, 3)`` uint8 images."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("pixmap data must be uint8")
    if img.ndim == 2:
        kind = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = b"P6"
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return kind + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(img))


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Read the P5/P6 files written by :func:`write_ppm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    m = _PPM_HEADER.match(data)
    if m is None:
        raise ValueError("not an 8-bit binary pixmap")
    w, h = int(m[2]), int(m[3])
    pixels = np.frombuffer(data, dtype=np.uint8, offset=m.end())
    return pixels.reshape(h, w) if m[1] == b"P5" else pixels.reshape(h, w, 3)
