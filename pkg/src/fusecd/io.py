"""Binary cube and change-map file formats.

HSC1 cube format: magic ``HSC1``, little-endian u32 bands, u32 rows,
u32 cols, then bands*rows*cols little-endian float32 values in
band-sequential order.

CM01 binary-map format: magic ``CM01``, little-endian u32 rows, u32 cols,
then rows*cols bytes holding 0/1.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import BinaryMap, HyperImage

HSC1_MAGIC = b"HSC1"
CM01_MAGIC = b"CM01"


def write_cube(path, img: HyperImage) -> None:
    payload = img.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(HSC1_MAGIC)
        f.write(struct.pack("<III", img.bands, img.rows, img.cols))
        f.write(payload)


def read_cube(path) -> HyperImage:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != HSC1_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {HSC1_MAGIC!r}")
        bands, rows, cols = struct.unpack("<III", f.read(12))
        raw = f.read(bands * rows * cols * 4)
    if len(raw) != bands * rows * cols * 4:
        raise ValueError(f"{path}: truncated cube payload")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(bands, rows, cols)
    return HyperImage(data)


def write_map(path, bm: BinaryMap) -> None:
    with open(path, "wb") as f:
        f.write(CM01_MAGIC)
        f.write(struct.pack("<II", bm.rows, bm.cols))
        f.write(bm.data.astype(np.uint8).tobytes(order="C"))


def read_map(path) -> BinaryMap:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CM01_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CM01_MAGIC!r}")
        rows, cols = struct.unpack("<II", f.read(8))
        raw = f.read(rows * cols)
    if len(raw) != rows * cols:
        raise ValueError(f"{path}: truncated map payload")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols)
    return BinaryMap(data)
