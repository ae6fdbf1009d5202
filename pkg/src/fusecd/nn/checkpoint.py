"""NNW1 checkpoint format.

Layout: magic ``NNW1``, little-endian u32 header length, JSON header
(network node list, input channels, dtype, tensor manifest), then the
raw parameter tensors in declaration order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Network, ParamStore

NNW1_MAGIC = b"NNW1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, net: Network, params: ParamStore, dtype: str = "float64",
                    meta: dict | None = None) -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    header = {
        "network": net.to_dict(),
        "dtype": dtype,
        "tensors": [{"node": n, "field": f, "shape": list(a.shape)} for n, f, a in params.entries],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(NNW1_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, _, a in params.entries:
            f.write(a.astype(_DTYPES[dtype]).tobytes(order="C"))


def load_checkpoint(path) -> tuple[Network, ParamStore, dict]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != NNW1_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {NNW1_MAGIC!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        dt = np.dtype(_DTYPES[header["dtype"]])
        entries = []
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise ValueError(f"{path}: truncated tensor {t['node']}.{t['field']}")
            entries.append((t["node"], t["field"],
                            np.frombuffer(raw, dtype=dt).astype(np.float64).reshape(shape)))
    net = Network.from_dict(header["network"])
    return net, ParamStore(entries), header.get("meta", {})
