"""Binary checkpoint files.

Layout (little-endian): magic ``DCKP``, u32 version (1), u32 tensor count,
then per tensor a u16 name length, the UTF-8 name, a u8 rank, ``rank`` u64
dims, and the float32 data in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, UsageError

MAGIC = b"DCKP"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise UsageError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise UsageError(f"tensor {name!r} has rank {arr.ndim}")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read every tensor, preserving file order."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated while reading {what}", offset=pos, path=path)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected DCKP", offset=0, path=path)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", offset=start, path=path) from None
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4")
        tensors[name] = data.reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", offset=pos, path=path)
    return tensors


def text_to_array(text: str) -> np.ndarray:
    """Encode text as one float per UTF-8 byte (exact in float32)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def array_to_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.float32).astype(np.uint8).tobytes().decode("utf-8")
