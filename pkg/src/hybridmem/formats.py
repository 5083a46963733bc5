"""On-disk formats: the HTRT tensor container and 8-bit PGM masks.

HTRT layout (all integers little-endian)::

    b"HTRT" | version u8 (=1) | dtype u8 (0 = float32 LE) | ndim u8 |
    ndim x u32 extents | row-major payload

PGM masks are binary ``P5`` rasters with maxval 255; a pixel value ``v``
maps to probability ``v / 255``.
"""
from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    HeaderMismatch,
    NonFiniteValue,
    TruncatedPayload,
    UnsupportedFormat,
)
from .memory import GlobalTokens, HybridMemory

MAGIC = b"HTRT"
VERSION = 1
DTYPE_F32 = 0


def encode_tensor(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise UnsupportedFormat("at most 255 dimensions")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    header = MAGIC + bytes([VERSION, DTYPE_F32, arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise TruncatedPayload(f"header needs at least 7 bytes, got {len(buf)}")
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {bytes(buf[:4])!r}")
    version, dtype, ndim = buf[4], buf[5], buf[6]
    if version != VERSION:
        raise BadVersion(f"unsupported container version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedFormat(f"unsupported dtype code {dtype}")
    head = 7 + 4 * ndim
    if len(buf) < head:
        raise TruncatedPayload(f"header declares {ndim} extents but file ends early")
    dims = struct.unpack(f"<{ndim}I", buf[7:head])
    if any(d == 0 for d in dims):
        raise HeaderMismatch(f"zero extent in {dims}")
    need = 4 * int(np.prod(dims, dtype=np.int64))
    have = len(buf) - head
    if have < need:
        raise TruncatedPayload(f"payload has {have} bytes, {need} required for {dims}")
    if have > need:
        raise HeaderMismatch(f"payload has {have - need} trailing bytes beyond {dims}")
    arr = np.frombuffer(buf, dtype="<f4", offset=head, count=need // 4).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("tensor payload contains NaN or Inf")
    return arr.astype(np.float32)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


_PGM_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def decode_pgm(buf: bytes) -> np.ndarray:
    """Parse a P5 raster into float32 probabilities in [0, 1]."""
    if not buf.startswith(b"P5"):
        raise UnsupportedFormat("not a binary PGM (missing P5 magic)")
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise HeaderMismatch("malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise UnsupportedFormat(f"only 8-bit PGM (maxval 255) supported, got {maxval}")
    if width == 0 or height == 0:
        raise HeaderMismatch("PGM with zero extent")
    payload = buf[m.end() :]
    if len(payload) != width * height:
        raise HeaderMismatch(
            f"PGM header says {width}x{height} = {width * height} bytes, payload has {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (raw.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def encode_pgm(mask) -> bytes:
    """Serialise probabilities in [0, 1] (rounded to the nearest 1/255)."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise UnsupportedFormat(f"mask must be 2-D, got shape {m.shape}")
    if m.size and (m.min() < 0 or m.max() > 1):
        raise ValueError("mask probabilities must lie in [0, 1]")
    raw = np.rint(m * 255.0).astype(np.uint8)
    h, w = raw.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def read_mask(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_mask(path, mask) -> None:
    Path(path).write_bytes(encode_pgm(mask))


def frame_name(index: int) -> str:
    return f"{index:05d}.pgm"


def list_masks(directory) -> list[Path]:
    """PGM files of a directory, sorted by name."""
    return sorted(p for p in Path(directory).iterdir() if p.suffix == ".pgm" and p.is_file())


def read_mask_dir(directory) -> list[np.ndarray]:
    return [read_mask(p) for p in list_masks(directory)]


def write_tensor_dir(directory, tensors: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, arr in tensors.items():
        write_tensor(Path(directory) / f"{name}.htrt", arr)


def read_tensor_dir(directory) -> dict[str, np.ndarray]:
    return {p.stem: read_tensor(p) for p in sorted(Path(directory).glob("*.htrt"))}


_MEMORY_FIELDS = ("keys", "values", "frame_index", "ref_indices", "ref_probs", "features")


def write_memory(directory, mem: HybridMemory) -> None:
    """Dump a memory bank as one container per field, for debugging.

    Undefined global tokens are simply not written.
    """
    tensors = {name: np.asarray(getattr(mem, name), dtype=np.float32) for name in _MEMORY_FIELDS}
    if mem.tokens.foreground is not None:
        tensors["token_fg"] = mem.tokens.foreground
    if mem.tokens.background is not None:
        tensors["token_bg"] = mem.tokens.background
    write_tensor_dir(directory, tensors)


def read_memory(directory) -> HybridMemory:
    t = read_tensor_dir(directory)
    missing = [name for name in _MEMORY_FIELDS if name not in t]
    if missing:
        raise FileNotFoundError(f"{directory}: missing {', '.join(m + '.htrt' for m in missing)}")
    return HybridMemory(
        keys=t["keys"],
        values=t["values"],
        frame_index=t["frame_index"].astype(np.int64),
        ref_indices=tuple(int(i) for i in t["ref_indices"]),
        ref_probs=t["ref_probs"],
        tokens=GlobalTokens(t.get("token_fg"), t.get("token_bg")),
        features=t["features"],
    )
