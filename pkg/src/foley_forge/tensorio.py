"""FGT1 tensor files: little-endian binary, f32 payload.

Layout: magic "FGT1" | version u32 | rank u32 | dims u32[rank] | f32 data.
"""

import struct

import numpy as np

from .nncore.errors import DataError

MAGIC = b"FGT1"
VERSION = 1


def write_tensor(path, array):
    array = np.asarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype("<f4").tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad tensor magic {magic!r}")
        version, rank = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise DataError(f"{path}: unsupported tensor version {version}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise DataError(f"{path}: truncated tensor payload")
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(dims)
