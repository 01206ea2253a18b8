"""PGT1 binary tensors.

Layout: the 4 magic bytes ``PGT1``, a one-line JSON header
``{"dims": [...], "dtype": "f32" | "f64", "byte_order": "little"}``, a newline,
then the raw little-endian values in row-major order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"PGT1"
DTYPES = {"f32": "<f4", "f64": "<f8"}


class TensorFormatError(ValueError):
    pass


def encode(array, dtype: str = "f64") -> bytes:
    if dtype not in DTYPES:
        raise TensorFormatError(f"unsupported dtype {dtype!r}")
    arr = np.array(array, dtype=DTYPES[dtype], order="C")
    header = json.dumps({"dims": list(arr.shape), "dtype": dtype, "byte_order": "little"},
                        separators=(",", ":"))
    return MAGIC + header.encode() + b"\n" + arr.tobytes(order="C")


def decode(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise TensorFormatError("missing PGT1 magic")
    end = blob.find(b"\n", 4)
    if end < 0:
        raise TensorFormatError("unterminated header")
    try:
        header = json.loads(blob[4:end])
    except json.JSONDecodeError as exc:
        raise TensorFormatError(f"bad header: {exc}") from exc
    if header.get("byte_order") != "little" or header.get("dtype") not in DTYPES:
        raise TensorFormatError(f"unsupported header {header}")
    dims = [int(d) for d in header["dims"]]
    dt = np.dtype(DTYPES[header["dtype"]])
    body = blob[end + 1:]
    if len(body) != int(np.prod(dims, dtype=np.int64)) * dt.itemsize:
        raise TensorFormatError("payload size does not match dims")
    return np.frombuffer(body, dtype=dt).reshape(tuple(dims)).copy()


def write_tensor(path, array, dtype: str = "f64") -> Path:
    path = Path(path)
    path.write_bytes(encode(array, dtype))
    return path


def read_tensor(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
