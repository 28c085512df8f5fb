"""Binary weight files: bit-exact round trip of named tensors.

Layout (all integers little-endian):

    magic   4 bytes  "CADW"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8
        dtype    u8   0 = f32, 1 = f64
        rank     u8
        extents  u32 x rank
        payload  row-major little-endian scalars
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .init import walk_params
from .tensor import Tensor

MAGIC = b"CADW"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class WeightFormatError(ValueError):
    pass


def save_weights(path, named_tensors: dict) -> None:
    """Write name -> Tensor/ndarray pairs; names must be unique."""
    names = list(named_tensors)
    if len(set(names)) != len(names):
        raise WeightFormatError("duplicate tensor names")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        t = named_tensors[name]
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.dtype not in _DTYPE_CODES:
            raise WeightFormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFormatError(f"tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(np.ascontiguousarray(le).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightFormatError(f"{self.path}: truncated file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(path) -> dict:
    """Read a weight file back into an ordered name -> ndarray dict."""
    rd = _Reader(Path(path).read_bytes(), path)
    if rd.read(4) != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    version, count = struct.unpack("<II", rd.read(8))
    if version != VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", rd.read(2))
        name = rd.read(name_len).decode("utf-8")
        code, rank = struct.unpack("<BB", rd.read(2))
        if code not in _CODE_DTYPES:
            raise WeightFormatError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}I", rd.read(4 * rank))
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        arr = np.frombuffer(rd.read(n_bytes), dtype=dtype).reshape(shape).copy()
        if name in out:
            raise WeightFormatError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    if rd.pos != len(rd.blob):
        raise WeightFormatError(f"{path}: {len(rd.blob) - rd.pos} trailing bytes")
    return out


def checksum_file(path) -> str:
    """SHA-256 over every tensor payload in file order, streamed."""
    digest = hashlib.sha256()
    for arr in load_weights(path).values():
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def checksum_tensors(named_tensors: dict) -> str:
    digest = hashlib.sha256()
    for t in named_tensors.values():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        digest.update(np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False)).tobytes())
    return digest.hexdigest()


def save_model(path, params) -> None:
    save_weights(path, dict(walk_params(params)))


def load_model(path, params) -> None:
    """Load a weight file into an already-built parameter bundle in place.

    Names and shapes must match exactly; dtype follows the file.
    """
    loaded = load_weights(path)
    current = dict(walk_params(params))
    missing = sorted(set(current) - set(loaded))
    extra = sorted(set(loaded) - set(current))
    if missing or extra:
        raise WeightFormatError(f"weight mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, tensor in current.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise WeightFormatError(f"{name}: shape {arr.shape} != expected {tensor.data.shape}")
        tensor.data = arr
