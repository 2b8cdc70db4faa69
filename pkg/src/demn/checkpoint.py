"""Binary parameter container shared by embedder and QA checkpoints.

Layout, all little-endian::

    b"DEMN"  u32 version  u32 dim_v  u32 dim_l  u32 dim_e  u32 n_blocks
    n_blocks x ( u16 tag_len, tag utf-8, u8 kind, payload )

kind 0 is a float64 array (u32 ndim, u32 shape..., row-major data);
kind 1 is utf-8 text (u32 byte length, bytes).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"DEMN"
VERSION = 1
_ARRAY, _TEXT = 0, 1


def write_container(path, dims, blocks: dict) -> None:
    dim_v, dim_l, dim_e = (int(d) for d in dims)
    out = bytearray(MAGIC)
    out += struct.pack("<IIIII", VERSION, dim_v, dim_l, dim_e, len(blocks))
    for tag, value in blocks.items():
        raw_tag = tag.encode("utf-8")
        out += struct.pack("<H", len(raw_tag)) + raw_tag
        if isinstance(value, str):
            data = value.encode("utf-8")
            out += struct.pack("<BI", _TEXT, len(data)) + data
        else:
            arr = np.ascontiguousarray(value, dtype="<f8")
            out += struct.pack("<BI", _ARRAY, arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def read_container(path):
    """Return ``((dim_v, dim_l, dim_e), blocks)``; blocks keep file order."""
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise ParseError(f"truncated checkpoint at byte {pos}", path=path)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ParseError("not a DEMN checkpoint (bad magic)", path=path)
    version, dim_v, dim_l, dim_e, n_blocks = struct.unpack("<IIIII", take(20))
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path=path)
    blocks = {}
    for _ in range(n_blocks):
        (tag_len,) = struct.unpack("<H", take(2))
        tag = take(tag_len).decode("utf-8")
        kind, n = struct.unpack("<BI", take(5))
        if kind == _TEXT:
            blocks[tag] = take(n).decode("utf-8")
        elif kind == _ARRAY:
            shape = struct.unpack(f"<{n}I", take(4 * n))
            count = int(np.prod(shape)) if shape else 1
            blocks[tag] = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        else:
            raise ParseError(f"unknown block kind {kind} for {tag!r}", path=path)
    if pos != len(buf):
        raise ParseError(f"{len(buf) - pos} trailing bytes after last block", path=path)
    return (dim_v, dim_l, dim_e), blocks
