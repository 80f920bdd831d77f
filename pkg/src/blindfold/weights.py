"""Binary container for model parameters.

Layout (all little-endian):

    magic   4 bytes  b"BFWT"
    version u32      currently 1
    count   u32      number of tensor records
    record  ->  name_len u16, name utf-8,
                dtype    u8  (1 = float32, 2 = int8),
                rank     u8,
                dims     u32 * rank,
                data     raw tensor bytes, C order

The format is deliberately dumb: fixed endianness and explicit dims make it
bit-exact across platforms.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"BFWT"
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("i1")}
_DTYPE_TAGS = {np.dtype("<f4"): 1, np.dtype("i1"): 2}


class WeightsFormatError(ValueError):
    """Raised on malformed weight containers."""


def write_weights(tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize named tensors; float arrays are stored as float32."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4")
        elif arr.dtype == np.int8:
            arr = arr.astype("i1")
        else:
            raise WeightsFormatError(
                f"tensor {name!r} has unsupported dtype {arr.dtype}; "
                "store float32 or int8"
            )
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise WeightsFormatError(f"tensor name too long: {name[:32]!r}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def read_weights(blob: bytes) -> dict[str, np.ndarray]:
    """Parse a weight container back into named numpy arrays."""
    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise WeightsFormatError("not a weights container (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weights version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        offset, name, arr = _read_record(view, offset)
        if name in out:
            raise WeightsFormatError(f"duplicate tensor name {name!r}")
        out[name] = arr
    if offset != len(view):
        raise WeightsFormatError(f"{len(view) - offset} trailing bytes after records")
    return out


def _read_record(view: memoryview, offset: int) -> tuple[int, str, np.ndarray]:
    def need(n: int) -> None:
        if offset + n > len(view):
            raise WeightsFormatError("truncated weights container")

    need(2)
    (name_len,) = struct.unpack_from("<H", view, offset)
    offset += 2
    need(name_len + 2)
    name = bytes(view[offset : offset + name_len]).decode("utf-8")
    offset += name_len
    tag, rank = struct.unpack_from("<BB", view, offset)
    offset += 2
    if tag not in _DTYPES:
        raise WeightsFormatError(f"unknown dtype tag {tag} for tensor {name!r}")
    need(4 * rank)
    dims = struct.unpack_from(f"<{rank}I", view, offset)
    offset += 4 * rank
    dtype = _DTYPES[tag]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
    if rank == 0:
        dims = ()
    need(nbytes)
    arr = np.frombuffer(view[offset : offset + nbytes], dtype=dtype).reshape(dims)
    offset += nbytes
    return offset, name, arr.copy()
