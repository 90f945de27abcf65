"""Binary checkpoint container for named float32 tensors.

Layout (all integers little-endian unsigned 32-bit):
    magic "RCAL" | format version | tensor count
    per tensor: name length, UTF-8 name, rank, dims..., raw little-endian
    float32 payload in row-major order.

Round trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"RCAL"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError(f"{path}: truncated at byte {offset}")
        vals = struct.unpack_from(fmt, blob, offset)
        offset += size
        return vals

    version, count = take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = blob[offset:offset + 4 * n]
        if len(payload) != 4 * n:
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        offset += 4 * n
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors
