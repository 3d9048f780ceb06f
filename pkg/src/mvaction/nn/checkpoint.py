"""Binary parameter checkpoints.

Layout (little-endian)::

    b"MVCK"  uint32 version  uint32 record_count
    per record: uint16 name_len, name (utf-8), uint32 ndim, uint32 dims[ndim],
                float64 payload[prod(dims)]
"""
import struct

import numpy as np

from ..errors import ValidationError

MAGIC = b"MVCK"
VERSION = 1


def save_checkpoint(path, params):
    """Write ``params`` (an ordered mapping or iterable of Parameters)."""
    items = params.items() if hasattr(params, "items") else ((p.name, p) for p in params)
    items = list(items)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(items)))
        for name, p in items:
            data = np.asarray(getattr(p, "data", p), dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 12, {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return out
