"""FGCK checkpoint files for ParamTrees (weights + Adam state).

Layout: magic "FGCK" | format version u32 | record count u32 | records.
Record: name length u32 | name utf-8 | rank u32 | dims u32[rank] | f32 data.
Adam moments are stored as sibling records suffixed "#m"/"#v"; the step
counter as the reserved record "#step".  Loaders reject unknown versions.
"""

import struct

import numpy as np

from .errors import CheckpointError
from .params import ParamTree

MAGIC = b"FGCK"
VERSION = 1


def _write_record(fh, name, array):
    payload = np.asarray(array, dtype="<f4")
    raw = name.encode()
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", payload.ndim))
    if payload.ndim:
        fh.write(struct.pack(f"<{payload.ndim}I", *payload.shape))
    fh.write(payload.tobytes(order="C"))


def save_params(path, params: ParamTree):
    records = []
    for name in params.names():
        records.append((name, params.leaves[name]))
        records.append((name + "#m", params.adam_m[name]))
        records.append((name + "#v", params.adam_v[name]))
    records.append(("#step", np.array([params.step], dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, array in records:
            _write_record(fh, name, array)


def load_params(path) -> ParamTree:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unknown checkpoint version {version}")
        raw = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            buf = fh.read(4 * n)
            if len(buf) != 4 * n:
                raise CheckpointError(f"{path}: truncated record '{name}'")
            raw[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(dims)
    params = ParamTree()
    params.step = int(raw.pop("#step")[0]) if "#step" in raw else 0
    for name, value in raw.items():
        if "#" in name:
            continue
        params.add(name, value)
        m = raw.get(name + "#m")
        v = raw.get(name + "#v")
        if m is None or v is None or m.shape != value.shape or v.shape != value.shape:
            raise CheckpointError(f"{path}: inconsistent Adam state for '{name}'")
        params.adam_m[name] = m
        params.adam_v[name] = v
    return params
