"""Flat binary checkpoint format.

Layout: the magic line, then one record per parameter in iteration order:
name length (u32 LE), UTF-8 name, rank (u32 LE), extents (u32 LE each),
raw float32 little-endian values.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MTLSEG1\n"


def save_checkpoint(path, state: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, array in state.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", array.ndim))
            for extent in array.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError("bad checkpoint magic", offset=0)
    state: dict[str, np.ndarray] = {}
    pos = len(MAGIC)

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(blob):
            raise FormatError("truncated checkpoint", offset=pos)
        piece = blob[pos : pos + nbytes]
        pos += nbytes
        return piece

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        if name in state:
            raise FormatError(f"duplicate parameter '{name}'", offset=pos)
        state[name] = data.copy()
    return state
