"""Wire payload codecs.

PNG writing is byte-deterministic (filter 0, fixed zlib level) and matches
the optimizer's on-the-wire encoding, so golden exchanges replay exactly.
Decoding goes through Pillow and accepts any well-formed PNG.
"""

from __future__ import annotations

import base64
import io
import struct
import zlib

import numpy as np
from PIL import Image

__all__ = ["encode_png_b64", "decode_png_b64", "decode_f32_b64", "encode_f32_b64", "PayloadError"]


class PayloadError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def encode_png_b64(image: np.ndarray) -> str:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if arr.ndim == 2:
        color_type, rows = 0, arr[:, :, np.newaxis]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type, rows = 2, arr
    else:
        raise PayloadError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    raw = b"".join(b"\x00" + rows[i].tobytes() for i in range(h))
    data = b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b"")
    return base64.b64encode(data).decode("ascii")


def decode_png_b64(data: str, mode: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise PayloadError(f"not a decodable PNG: {exc}") from exc
    return np.asarray(img.convert(mode))


def decode_f32_b64(data: str, count: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise PayloadError(f"not valid base64: {exc}") from exc
    if len(raw) != count * 4:
        raise PayloadError(f"expected {count * 4} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def encode_f32_b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")
