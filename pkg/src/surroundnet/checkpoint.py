"""Named-tensor container files.

Layout (all integers little-endian)::

    b"SRND" | version u8 = 1 | count u32
    count x ( name_len u16 | utf-8 name | rank u8 | rank x dim u32 | float32 values )

Model checkpoints hold the network parameters under their dotted names; the
optimizer state lives in a sibling file with the same layout.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SRND"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write ``tensors`` in insertion order; the file is replaced atomically."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 9 or raw[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported version {raw[4] if len(raw) > 4 else None}")
    (count,) = struct.unpack_from("<I", raw, 5)
    pos = 9
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            rank = raw[pos]
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            out[name] = values.astype(np.float32).reshape(dims)
    except (struct.error, IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from None
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def optimizer_path(checkpoint) -> Path:
    p = Path(checkpoint)
    return p.with_name(p.name + ".optim")


def save_model(path, net) -> None:
    save_tensors(path, net.state_dict())


def load_model(path):
    from .model import SurroundNet

    return SurroundNet.from_state_dict(load_tensors(path))
