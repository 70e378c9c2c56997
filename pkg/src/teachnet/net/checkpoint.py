"""Single-file weight checkpoints.

Layout::

    b"TNCK"                      magic
    uint32 little-endian         header length in bytes
    header                       UTF-8 JSON: config echo plus a block table
                                 [{"name", "shape"}, ...] in storage order
    blocks                       raw little-endian float32, concatenated

Storage order is branch ``robot`` then ``human`` then ``discriminator``;
within a branch, parameters precede BN running statistics, each in layer
order.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNCK"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, header, tensors):
    """Write ``tensors`` (an ordered name -> array mapping) with a JSON ``header``."""
    names = list(tensors)
    head = dict(header)
    head["blocks"] = [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names]
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(header, tensors)``; tensors keep the stored order."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    off = 8 + n
    tensors = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        size = int(np.prod(shape)) * 4
        if off + size > len(data):
            raise CheckpointError(f"{path}: truncated at block {block['name']}")
        tensors[block["name"]] = np.frombuffer(data, dtype="<f4", count=size // 4,
                                               offset=off).reshape(shape).astype(np.float32)
        off += size
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, tensors
