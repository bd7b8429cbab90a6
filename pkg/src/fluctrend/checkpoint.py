"""Binary checkpoint format.

Layout (little-endian throughout):
  magic "DFT1"
  u32 tensor count
  per tensor: u16 name length, UTF-8 name, u8 ndim, u32 per dim, raw
  IEEE-754 float64 values
  u32 JSON byte length, UTF-8 JSON trailer (config echo + train state)

Optimizer moments are stored as extra tensors under the "opt.m." and
"opt.v." name prefixes so resumed runs are bit-for-bit identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DFT1"
DATA_MAGIC = b"DFTD"


class CheckpointError(ValueError):
    pass


def write_tensors(path: str, tensors: dict[str, np.ndarray], trailer: dict, magic: bytes = MAGIC) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())
        blob = json.dumps(trailer, sort_keys=True, separators=(",", ":")).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def read_tensors(path: str, magic: bytes = MAGIC) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if raw[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    off = 4

    def need(n: int) -> int:
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {off}")
        off += n
        return off - n

    (count,) = struct.unpack_from("<I", raw, need(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, need(2))
        name = bytes(view[need(name_len) : off]).decode("utf-8")
        (ndim,) = struct.unpack_from("<B", raw, need(1))
        shape = tuple(struct.unpack_from("<I", raw, need(4))[0] for _ in range(ndim))
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
        arr = np.frombuffer(view[need(n_bytes) : off], dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    (json_len,) = struct.unpack_from("<I", raw, need(4))
    trailer = json.loads(bytes(view[need(json_len) : off]).decode("utf-8"))
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes after trailer")
    return tensors, trailer
