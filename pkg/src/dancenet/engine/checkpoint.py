"""Binary parameter checkpoints.

Layout (little-endian): magic b"TCH1", u32 parameter count, then per
parameter in lexicographic name order: u16 name length, name bytes (utf-8),
u8 rank, u32 per dimension, float32 values row-major.  Write -> read -> write
is byte-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import ParameterSet, Tensor

MAGIC = b"TCH1"


def params_to_bytes(params: ParameterSet) -> bytes:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def params_from_bytes(buf: bytes) -> ParameterSet:
    if buf[:4] != MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:4]!r}, expected {MAGIC!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    off = 8
    params = ParameterSet()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        params.add(name, Tensor(arr.copy(), requires_grad=True))
    if off != len(buf):
        raise ValueError(f"trailing bytes in checkpoint: read {off} of {len(buf)}")
    return params


def save_checkpoint(params: ParameterSet, path) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_checkpoint(path) -> ParameterSet:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
