"""Raster containers, binary PPM/PGM file I/O, and the grayscale / crop /
resize preprocessing shared by the vision paths.

Wire formats: PPM is binary P6 with maxval 255; PGM is binary P5 with
maxval 65535 and big-endian 16-bit samples (depth in millimeters).
'#' comments are allowed anywhere in the headers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported image file."""


@dataclass
class RgbImage:
    """8-bit RGB raster, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("RgbImage pixels must be (height, width, 3)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class DepthImage:
    """16-bit depth raster in millimeters, pixels shaped (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint16)
        if self.pixels.ndim != 2:
            raise ValueError("DepthImage pixels must be (height, width)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class GrayImage:
    """Real-valued intensities in [0, 1], pixels shaped (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ValueError("GrayImage pixels must be (height, width)")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("GrayImage values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _parse_header(data: bytes, magic: bytes, path) -> tuple[list[int], int]:
    """Parse a netpbm header; returns ([width, height, maxval], payload offset)."""
    if data[:2] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic.decode()}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token:
            raise FormatError(f"{path}: truncated header")
        if not token.isdigit():
            raise FormatError(f"{path}: non-numeric header field {token!r}")
        fields.append(int(token))
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing separator after header")
    return fields, pos + 1


def load_ppm(path) -> RgbImage:
    """Load a binary (P6) PPM file."""
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _parse_header(data, b"P6", path)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected 255")
    need = width * height * 3
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(pixels.copy())


def save_ppm(image: RgbImage, path) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode()
    Path(path).write_bytes(header + image.pixels.tobytes())


def load_pgm(path) -> DepthImage:
    """Load a binary (P5) PGM file with 16-bit big-endian samples."""
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _parse_header(data, b"P5", path)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 65535:
        raise FormatError(f"{path}: unsupported maxval {maxval}, expected 65535")
    need = width * height * 2
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    pixels = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return DepthImage(pixels.astype(np.uint16))


def save_pgm(image: DepthImage, path) -> None:
    header = f"P5\n{image.width} {image.height}\n65535\n".encode()
    Path(path).write_bytes(header + image.pixels.astype(">u2").tobytes())


def to_gray(image: RgbImage) -> GrayImage:
    """Luminance 0.299 R + 0.587 G + 0.114 B, scaled to [0, 1]."""
    rgb = image.pixels.astype(float)
    lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return GrayImage(lum / 255.0)


def crop_center_quarter(image):
    """Central crop of half the width and half the height (1/4 of the area).

    Accepts RgbImage, DepthImage, or GrayImage and returns the same type.
    """
    w, h = image.width, image.height
    if w < 4 or h < 4:
        raise ValueError(f"image too small to crop: {w}x{h}")
    cw, ch = w // 2, h // 2
    ox, oy = (w - cw) // 2, (h - ch) // 2
    return type(image)(image.pixels[oy:oy + ch, ox:ox + cw].copy())


def crop_window(image) -> tuple[int, int, int, int]:
    """(ox, oy, cw, ch) of the central-quarter crop for this image's size."""
    w, h = image.width, image.height
    cw, ch = w // 2, h // 2
    return (w - cw) // 2, (h - ch) // 2, cw, ch


def _bilinear(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Pixel-center-aligned bilinear resample of a float array (h, w[, c])."""
    in_h, in_w = src.shape[:2]
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = np.clip(xs, 0.0, in_w - 1.0)
    ys = np.clip(ys, 0.0, in_h - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = xs - x0
    fy = ys - y0
    if src.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
        top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
        bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    else:
        fx = fx[None, :]
        fy = fy[:, None]
        top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
        bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(image, out_w: int, out_h: int):
    """Bilinear resize to exactly (out_w, out_h); same image type out."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    out = _bilinear(image.pixels.astype(float), out_w, out_h)
    if isinstance(image, GrayImage):
        return GrayImage(np.clip(out, 0.0, 1.0))
    if isinstance(image, RgbImage):
        return RgbImage(np.clip(np.round(out), 0, 255).astype(np.uint8))
    return DepthImage(np.clip(np.round(out), 0, 65535).astype(np.uint16))
