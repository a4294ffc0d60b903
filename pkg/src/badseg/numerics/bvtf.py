"""BVTF binary tensor files.

Layout: magic `BVTF`, u32-le version (1), u8 dtype (0 = f32), u8 ndim,
ndim u32-le dims, row-major f32-le payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"BVTF"
VERSION = 1
DTYPE_F32 = 0

__all__ = ["save_bvtf", "load_bvtf"]


def save_bvtf(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.tobytes())


def load_bvtf(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a BVTF file (bad magic)")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported BVTF version {version}")
    if dtype != DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype code {dtype}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 10)
    payload = raw[10 + 4 * ndim:]
    count = int(np.prod(dims)) if ndim else 1
    if len(payload) != 4 * count:
        raise ValueError(f"{path}: payload length {len(payload)} != 4*{count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
