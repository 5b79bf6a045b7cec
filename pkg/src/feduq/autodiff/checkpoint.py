"""Binary checkpoint format for named float64 parameter arrays.

Layout (all integers little-endian uint32):

    magic b"FQCK" | version | entry_count
    per entry: name_len | name utf-8 | ndim | dims...
    payload: for each entry, the values as little-endian float64 in
    C-contiguous order, concatenated in header order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DataError

MAGIC = b"FQCK"
VERSION = 1


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    payload = []
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks + payload))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise DataError(f"truncated checkpoint header: {path}")
        values = struct.unpack_from(fmt, raw, offset)
        offset += size
        return values

    version, count = take("<II")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    entries = []
    for _ in range(count):
        (name_len,) = take("<I")
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        entries.append((name, tuple(shape)))

    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in entries:
        n_values = int(np.prod(shape)) if shape else 1
        size = n_values * 8
        if offset + size > len(raw):
            raise DataError(f"truncated checkpoint payload: {path}")
        arr = np.frombuffer(raw, dtype="<f8", count=n_values, offset=offset).reshape(shape)
        out[name] = arr.astype(np.float64)
        offset += size
    if offset != len(raw):
        raise DataError(f"trailing bytes in checkpoint: {path}")
    return out
