"""Resolution reduction by bilinear interpolation, and raster file I/O.

Coordinates follow the origin-aligned convention: output pixel (row i,
column j) of an ``m x n`` resize of an ``a x b`` image reads the source at
column ``j*a/m`` and row ``i*b/n``.  No half-pixel offset is applied, and
no pre-filtering happens before downscaling.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DomainError,
    ImageIOError,
    TruncatedFileError,
    UnsupportedFormatError,
)

LADDER = (50, 35, 25, 18, 13, 9, 7, 5, 3)
MODEL_SIDE = 50


@dataclass(eq=False)
class Image:
    """Float32 raster, shape ``(height, width, channels)`` with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DomainError(f"image must be HxWx1 or HxWx3, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DomainError("image must be at least 1x1")
        data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise DomainError("intensities must lie in [0, 1]")
        self.data = data

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"


def sample_bilinear(img: Image, x0: float, y0: float, ch: int = 0) -> float:
    """Interpolate ``img`` at column ``x0``, row ``y0``.

    Neighbours past the last column/row are clamped to it, so any
    coordinate with ``0 <= x0 < width`` and ``0 <= y0 < height`` is valid.
    """
    if not 0 <= ch < img.channels:
        raise DomainError(f"channel {ch} out of range for {img.channels}-channel image")
    if not (0.0 <= x0 < img.width and 0.0 <= y0 < img.height):
        raise DomainError(f"({x0}, {y0}) lies outside a {img.width}x{img.height} image")
    f = img.data[:, :, ch]
    x = math.floor(x0)
    y = math.floor(y0)
    x1 = min(x + 1, img.width - 1)
    y1 = min(y + 1, img.height - 1)
    f00 = float(f[y, x])
    f10 = float(f[y, x1])
    f01 = float(f[y1, x])
    f11 = float(f[y1, x1])
    z1 = (f10 - f00) * (x0 - x) + f00
    z2 = (f11 - f01) * (x0 - x) + f01
    return (z2 - z1) * (y0 - y) + z1


def _axis_map(src: int, dst: int):
    coord = np.arange(dst, dtype=np.float64) * src / dst
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coord - lo


def resize(img: Image, m: int, n: int) -> Image:
    """Resize to ``m`` columns by ``n`` rows with bilinear interpolation."""
    if int(m) != m or int(n) != n or m < 1 or n < 1:
        raise DomainError(f"target size must be positive integers, got {m}x{n}")
    m, n = int(m), int(n)
    f = img.data.astype(np.float64)
    xl, xh, dx = _axis_map(img.width, m)
    yl, yh, dy = _axis_map(img.height, n)
    dx = dx[None, :, None]
    dy = dy[:, None, None]
    top = f[yl]
    bottom = f[yh]
    z1 = (top[:, xh] - top[:, xl]) * dx + top[:, xl]
    z2 = (bottom[:, xh] - bottom[:, xl]) * dx + bottom[:, xl]
    z = (z2 - z1) * dy + z1
    return Image(z.astype(np.float32))


def degrade(img: Image, k: int, side: int = MODEL_SIDE) -> Image:
    """Simulate a ``k x k`` camera: shrink to ``k x k``, then enlarge to ``side x side``."""
    return resize(resize(img, k, k), side, side)


def flip_horizontal(img: Image) -> Image:
    return Image(img.data[:, ::-1, :])


# --- file I/O -------------------------------------------------------------

_PNM_MAGIC = {b"P5": 1, b"P6": 3}


def _pnm_header(buf: bytes, path):
    """Parse a binary PNM header. Returns (width, height, maxval, offset, channels)."""
    if len(buf) < 2 or buf[:2] not in _PNM_MAGIC:
        raise UnsupportedFormatError(f"{path}: not a binary PGM/PPM file")
    channels = _PNM_MAGIC[buf[:2]]
    fields = []
    pos = 2
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= len(buf):
                raise TruncatedFileError(f"{path}: header ends early")
            raise UnsupportedFormatError(f"{path}: malformed header")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise TruncatedFileError(f"{path}: header ends early")
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise UnsupportedFormatError(f"{path}: invalid header values {fields}")
    return width, height, maxval, pos + 1, channels


def _read_pnm(buf: bytes, path) -> Image:
    width, height, maxval, offset, channels = _pnm_header(buf, path)
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height * channels
    body = buf[offset:]
    if len(body) < count * dtype.itemsize:
        raise TruncatedFileError(
            f"{path}: expected {count * dtype.itemsize} bytes of pixel data, found {len(body)}"
        )
    raw = np.frombuffer(body, dtype=dtype, count=count)
    data = raw.astype(np.float32) / np.float32(maxval)
    return Image(np.minimum(data, 1.0).reshape(height, width, channels))


def _read_pillow(path) -> Image:
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: unrecognised image format") from exc
    except OSError as exc:
        if "truncated" in str(exc).lower():
            raise TruncatedFileError(f"{path}: {exc}") from exc
        raise ImageIOError(f"{path}: {exc}") from exc
    return Image(arr.astype(np.float32) / np.float32(255.0))


_PILLOW_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}
IMAGE_SUFFIXES = frozenset({".pgm", ".ppm", ".pnm"} | _PILLOW_SUFFIXES)


def read_image(path) -> Image:
    """Decode PGM/PPM (P5/P6) natively, JPEG/PNG through Pillow."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            if head in _PNM_MAGIC:
                return _read_pnm(head + fh.read(), path)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: no such file") from exc
    except IsADirectoryError as exc:
        raise ImageIOError(f"{path}: is a directory") from exc
    except PermissionError as exc:
        raise ImageIOError(f"{path}: permission denied") from exc
    if path.suffix.lower() in {".pgm", ".ppm", ".pnm"}:
        raise UnsupportedFormatError(f"{path}: not a binary PGM/PPM file")
    return _read_pillow(path)


def quantize(data: np.ndarray) -> np.ndarray:
    """Map [0, 1] intensities to 8-bit with round-half-up."""
    return np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def write_image(img: Image, path) -> None:
    """Write 8-bit output; format picked from the suffix (``.pgm``/``.ppm`` or Pillow)."""
    path = Path(path)
    if not path.parent.exists():
        raise ImageIOError(f"{path.parent}: directory does not exist")
    q = quantize(img.data)
    suffix = path.suffix.lower()
    if suffix in {".pgm", ".ppm", ".pnm"}:
        if suffix == ".pgm" and img.channels != 1:
            raise UnsupportedFormatError(f"{path}: PGM holds one channel, image has {img.channels}")
        if suffix == ".ppm" and img.channels != 3:
            q = np.repeat(q, 3, axis=2)
        magic = b"P5" if q.shape[2] == 1 else b"P6"
        header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
        payload = header + q.tobytes()
    elif suffix in _PILLOW_SUFFIXES:
        from PIL import Image as PILImage

        arr = q[:, :, 0] if q.shape[2] == 1 else q
        try:
            PILImage.fromarray(arr).save(path)
        except OSError as exc:
            raise ImageIOError(f"{path}: {exc}") from exc
        return
    else:
        raise UnsupportedFormatError(f"{path}: unsupported output format {suffix!r}")
    try:
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
