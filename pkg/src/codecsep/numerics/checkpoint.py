"""Checkpoint container: a versioned flat binary of named arrays.

Layout (all little-endian):
    magic "CSCK" | u16 format version | u32 meta length | meta JSON (utf-8)
    u32 array count, then per array:
    u16 name length | name utf-8 | u8 dtype code | u8 ndim | u32 dims... | raw data

dtype codes: 0 = float32, 1 = float64, 2 = int64.
"""

import json
import struct

import numpy as np

MAGIC = b"CSCK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays, meta=None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 6)
    off = 10
    meta = json.loads(blob[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dt = _DTYPES.get(code)
        if dt is None:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
        arr = np.frombuffer(blob[off:off + nbytes], dtype=dt).reshape(shape)
        off += nbytes
        arrays[name] = arr.astype(dt.newbyteorder("="))
    return arrays, meta
