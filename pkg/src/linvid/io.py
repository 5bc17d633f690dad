"""File formats: LTZ tensors, binary PGM images, JSON manifests."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

LTZ_MAGIC = b"LTZ1"
SCHEMA_VERSION = 1


class FormatError(ValueError):
    pass


def ltz_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    header = LTZ_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_ltz(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(ltz_bytes(arr))


def read_ltz(path, dtype=np.float64) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != LTZ_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise FormatError(f"{path}: payload holds {(len(raw) - offset) // 4} values, header says {count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.reshape(shape).astype(dtype)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    """Write a 2-D intensity image in [0, 1] as 8-bit binary PGM (P5)."""
    img = np.asarray(img)
    if img.ndim != 2:
        img = img.reshape(img.shape[-2], img.shape[-1])
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + to_uint8(img).tobytes())


def _pgm_tokens(raw: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        if pos >= len(raw):
            raise ValueError("header ends early")
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval ≤ 255) as floats in [0, 1]."""
    raw = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(raw, 4)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: truncated PGM header") from exc
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    if len(raw) - pos < w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(raw) - pos}")
    pix = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return pix.reshape(h, w).astype(np.float64) / maxval


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
