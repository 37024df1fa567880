"""Weight checkpoint container.

Layout, little-endian::

    "PGWT"  u16 version  u32 parameter count
    per parameter: u16 name length, name bytes (utf-8), u8 rank,
                   rank x u32 dims, prod(dims) x f64
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..errors import CorruptFileError

MAGIC = b"PGWT"
VERSION = 1


def encode_checkpoint(named: dict) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(named))]
    for name, arr in named.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> dict:
    if len(data) < 14:
        raise CorruptFileError("checkpoint shorter than its header", len(data))
    if data[:4] != MAGIC:
        raise CorruptFileError("bad checkpoint magic", 0)
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CorruptFileError(f"unsupported checkpoint version {version}", 4)
    pos = 10
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 8 * n > len(data) - 4:
                raise CorruptFileError(f"parameter {name!r} runs past the end of the file", pos)
            out[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
            pos += 8 * n
    except (struct.error, UnicodeDecodeError):
        raise CorruptFileError("truncated or malformed parameter table", pos) from None
    if pos + 4 != len(data):
        raise CorruptFileError("trailing bytes after parameter table", pos)
    (crc,) = struct.unpack_from("<I", data, pos)
    if crc != zlib.crc32(data[:pos]):
        raise CorruptFileError("checkpoint checksum mismatch", pos)
    return out


def save_checkpoint(path, named: dict):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(named))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
