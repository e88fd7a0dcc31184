"""Image and array codecs for files and wire payloads.

PNG writing is done directly (filter 0, fixed zlib level) so identical
arrays always serialize to identical bytes; reading goes through Pillow and
accepts anything a peer might send. Float images are laid out row-major,
values in [0, 1] for 8-bit quantization.
"""

from __future__ import annotations

import base64
import io
import struct
import zlib

import numpy as np
from PIL import Image

__all__ = [
    "encode_png",
    "decode_png",
    "save_png",
    "load_png",
    "f32le_to_b64",
    "b64_to_f32le",
    "png_to_b64",
    "b64_to_png",
]


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png(image: np.ndarray) -> bytes:
    """Serialize a uint8 (H, W) grayscale or (H, W, 3) RGB array, or a float
    array in [0, 1], to deterministic PNG bytes."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if arr.ndim == 2:
        color_type = 0
        h, w = arr.shape
        rows = arr[:, :, np.newaxis]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
        h, w = arr.shape[:2]
        rows = arr
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")

    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    raw = b"".join(b"\x00" + rows[i].tobytes() for i in range(h))
    idat = zlib.compress(raw, 6)
    return b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def decode_png(data: bytes) -> np.ndarray:
    """PNG bytes to a uint8 array: (H, W) for grayscale, (H, W, 3) for color."""
    img = Image.open(io.BytesIO(data))
    if img.mode in ("L", "1"):
        return np.asarray(img.convert("L"))
    return np.asarray(img.convert("RGB"))


def save_png(image: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))


def load_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def f32le_to_b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def b64_to_f32le(data: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(data)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ValueError(f"expected {expected} bytes for shape {shape}, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def png_to_b64(image: np.ndarray) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def b64_to_png(data: str) -> np.ndarray:
    return decode_png(base64.b64decode(data))
