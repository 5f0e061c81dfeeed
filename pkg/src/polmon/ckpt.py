"""Flat binary checkpoint format for named parameter blocks.

Layout (all integers little-endian):
    magic    4 bytes  b"PMCK"
    version  uint32   (currently 1)
    nblocks  uint32
  then per block:
    name_len uint32
    name     utf-8 bytes
    ndim     uint32
    dims     uint32 * ndim
    data     float64 little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PMCK"
VERSION = 1


def save_blocks(path, blocks: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_blocks(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blocks: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, nblocks = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(nblocks):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            blocks[name] = np.array(data, dtype=np.float64)
    return blocks
