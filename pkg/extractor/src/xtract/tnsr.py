"""Writers for the shared on-disk formats.

Implemented against the byte-level format description, independently of the
consuming toolkit, so both sides stay honest to one spec: magic "TNSR",
version u32=1 LE, dtype u8 (1=f32, 2=i64), ndim u8, 2 zero pad bytes, each
dim as u64 LE, then the raw row-major little-endian payload.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ExtractError

_CODES = {np.dtype(np.float32): (1, "<f4"), np.dtype(np.int64): (2, "<i8")}


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise ExtractError(f"tensor dtype must be float32 or int64, got {arr.dtype}")
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ExtractError(f"tensor shape {arr.shape} has empty dimensions")
    code, wire = _CODES[arr.dtype]
    with open(path, "wb") as fh:
        fh.write(b"TNSR")
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<BB", code, arr.ndim))
        fh.write(b"\x00\x00")
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr).astype(wire, copy=False).tobytes(order="C"))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def rle_encode_mask(mask: np.ndarray) -> dict:
    """Column-major uncompressed RLE, starting with the 0-run."""
    mask = np.asarray(mask) != 0
    h, w = mask.shape
    flat = mask.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": [int(c) for c in counts]}
