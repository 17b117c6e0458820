"""Image containers, file I/O, and geometric preprocessing.

Images are numpy arrays of shape (H, W, C) with C in {1, 3}, float32,
nominally in [0, 1]. Intermediate results (e.g. noisy images) may leave
[0, 1]; clamping happens only when an image is written to disk.

File I/O covers 8-bit PNG (gray / RGB, no alpha) and binary PGM (P5) /
PPM (P6), with hand-rolled codecs so the quantization rule is bit-exact:
bytes load as v/255 and values save as round-half-up(255*v) after
clamping to [0, 1].
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = [
    "ImageError",
    "UnsupportedImageError",
    "TruncatedImageError",
    "as_image",
    "load_image",
    "save_image",
    "random_crop",
    "to_bytes",
    "from_bytes",
    "save_float_image",
    "load_float_image",
]


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnsupportedImageError(ImageError):
    """File is a recognized format but uses an unsupported variant
    (bit depth != 8, palette/alpha color types, interlacing, maxval != 255)."""


class TruncatedImageError(ImageError):
    """File ended before the payload promised by its header."""


def as_image(data, channels: int | None = None) -> np.ndarray:
    """Validate and normalize an array into (H, W, C) float32 image form.

    2-D input gets a singleton channel axis. Raises ValueError for
    shapes that are not H x W or H x W x {1,3}.
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW or HxWx{{1,3}} array, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {arr.shape[2]}")
    return arr


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Clamp to [0,1] and quantize to uint8 with round-half-up."""
    img = as_image(img)
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    """Map uint8 values to float32 v/255."""
    return as_image(raw.astype(np.float32) / 255.0)


# ---------------------------------------------------------------------------
# PNG (8-bit gray or RGB, no alpha, no interlace)
# ---------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def _write_png(img8: np.ndarray, path: Path) -> None:
    h, w, c = img8.shape
    color_type = 0 if c == 1 else 2
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    # filter byte 0 (None) per scanline
    rows = img8.reshape(h, w * c)
    raw = b"".join(b"\x00" + rows[i].tobytes() for i in range(h))
    data = (
        _PNG_SIG
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(raw, 9))
        + _png_chunk(b"IEND", b"")
    )
    path.write_bytes(data)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter_scanlines(raw: bytes, h: int, w: int, c: int) -> np.ndarray:
    stride = w * c
    if len(raw) < h * (stride + 1):
        raise TruncatedImageError("PNG pixel data shorter than header dimensions")
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        line = np.frombuffer(raw, np.uint8, stride, pos + 1).astype(np.int32)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 1:  # Sub
            cur = line.copy()
            for i in range(c, stride):
                cur[i] = (cur[i] + cur[i - c]) & 0xFF
        elif ftype == 2:  # Up
            cur = (line + prev) & 0xFF
        elif ftype == 3:  # Average
            cur = line.copy()
            for i in range(stride):
                left = cur[i - c] if i >= c else 0
                cur[i] = (cur[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            cur = line.copy()
            for i in range(stride):
                left = cur[i - c] if i >= c else 0
                upleft = prev[i - c] if i >= c else 0
                cur[i] = (cur[i] + _paeth(int(left), int(prev[i]), int(upleft))) & 0xFF
        else:
            raise UnsupportedImageError(f"unknown PNG filter type {ftype}")
        out[y] = cur.astype(np.uint8)
        prev = cur
    return out.reshape(h, w, c)


def _read_png(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:8] != _PNG_SIG:
        raise UnsupportedImageError("not a PNG file")
    pos = 8
    width = height = channels = None
    idat = bytearray()
    seen_end = False
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        if len(payload) < length:
            raise TruncatedImageError("PNG chunk extends past end of file")
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, ctype, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if depth != 8:
                raise UnsupportedImageError(f"PNG bit depth {depth}, only 8 supported")
            if ctype not in (0, 2):
                raise UnsupportedImageError(
                    f"PNG color type {ctype}, only gray(0)/RGB(2) supported"
                )
            if interlace != 0:
                raise UnsupportedImageError("interlaced PNG not supported")
            channels = 1 if ctype == 0 else 3
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            seen_end = True
            break
    if width is None:
        raise TruncatedImageError("PNG missing IHDR chunk")
    if not seen_end or not idat:
        raise TruncatedImageError("PNG missing IDAT/IEND chunks")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise TruncatedImageError(f"PNG pixel data undecodable: {exc}") from exc
    return _unfilter_scanlines(raw, height, width, channels)


# ---------------------------------------------------------------------------
# PGM (P5) / PPM (P6), binary, maxval 255
# ---------------------------------------------------------------------------


def _read_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise UnsupportedImageError(f"unsupported PNM magic {magic!r}")

    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        ch = data[pos]
        if ch in b" \t\r\n":
            pos += 1
        elif ch in b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos] not in b" \t\r\n":
                pos += 1
            tokens.append(data[start:pos])
    if len(tokens) < 3 or pos >= len(data):
        raise TruncatedImageError("PNM header incomplete")
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise UnsupportedImageError(f"malformed PNM header: {exc}") from exc
    if maxval != 255:
        raise UnsupportedImageError(f"PNM maxval {maxval}, only 255 supported")
    need = w * h * channels
    body = data[pos : pos + need]
    if len(body) < need:
        raise TruncatedImageError(
            f"PNM payload has {len(body)} bytes, header promises {need}"
        )
    return np.frombuffer(body, np.uint8).reshape(h, w, channels).copy()


def _write_pnm(img8: np.ndarray, path: Path) -> None:
    h, w, c = img8.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + img8.tobytes())


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Load a PNG / PGM / PPM file as a float32 (H, W, C) image in [0, 1].

    8-bit values map to v/255 exactly. Raises FileNotFoundError,
    UnsupportedImageError, or TruncatedImageError as applicable.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    data = path.read_bytes()
    if data[:8] == _PNG_SIG:
        raw = _read_png(data)
    elif data[:2] in (b"P5", b"P6"):
        raw = _read_pnm(data)
    else:
        raise UnsupportedImageError(f"unrecognized image format in {path}")
    return from_bytes(raw)


def save_image(img: np.ndarray, path) -> None:
    """Write an image as PNG (.png) or binary PNM (.pgm/.ppm).

    Values are clamped to [0, 1] then quantized with round-half-up.
    """
    path = Path(path)
    img8 = to_bytes(img)
    suffix = path.suffix.lower()
    if suffix == ".png":
        _write_png(img8, path)
    elif suffix in (".pgm", ".ppm"):
        if suffix == ".pgm" and img8.shape[2] != 1:
            raise ValueError("PGM stores single-channel images only")
        if suffix == ".ppm" and img8.shape[2] != 3:
            raise ValueError("PPM stores 3-channel images only")
        _write_pnm(img8, path)
    else:
        raise ValueError(f"unsupported output extension {suffix!r}")


_F32_MAGIC = b"N2NIMGF1"


def save_float_image(img: np.ndarray, path) -> None:
    """Write an unclamped float32 image verbatim (magic, u32 h/w/c
    little-endian, then raw float32-LE values)."""
    img = as_image(img)
    h, w, c = img.shape
    header = _F32_MAGIC + struct.pack("<III", h, w, c)
    Path(path).write_bytes(header + np.ascontiguousarray(img, "<f4").tobytes())


def load_float_image(path) -> np.ndarray:
    """Read a float sidecar written by save_float_image."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    data = path.read_bytes()
    if data[:8] != _F32_MAGIC:
        raise UnsupportedImageError(f"{path} is not a float image sidecar")
    h, w, c = struct.unpack("<III", data[8:20])
    need = h * w * c
    values = np.frombuffer(data, "<f4", -1, 20)
    if len(values) < need:
        raise TruncatedImageError(f"sidecar has {len(values)} values, needs {need}")
    return values[:need].reshape(h, w, c).astype(np.float32)


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Extract a uniformly placed size x size crop (exact window copy)."""
    img = as_image(img)
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image bounds {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size].copy()
