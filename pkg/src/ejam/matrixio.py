"""Binary container for 2-D float64 matrices ("EJMX" files).

One format is shared by features, impulse responses, normalization stats,
and other intermediate artifacts. Layout, all little-endian:

    bytes 0-3    magic "EJMX"
    bytes 4-5    format version (u16), currently 1
    bytes 6-9    metadata length M in bytes (u32); 0 means no metadata
    next M       UTF-8 JSON metadata object
    next 4       row count (u32)
    next 4       column count (u32)
    next 8*r*c   row-major float64 matrix data
    last 4       CRC-32 (u32) of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"EJMX"
VERSION = 1


def write_matrix(path, matrix, meta=None):
    """Write a 2-D float64 matrix (plus optional JSON metadata) to *path*."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    meta_bytes = b"" if meta is None else json.dumps(meta).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<II", matrix.shape[0], matrix.shape[1])
    blob += matrix.astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def read_matrix(path):
    """Read an EJMX file; returns ``(matrix, meta_dict_or_None)``.

    Raises FormatError on bad magic, unsupported version, truncation, or
    checksum mismatch.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 18:
        raise FormatError(f"{path}: file too short to be an EJMX container")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported EJMX version {version}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    (meta_len,) = struct.unpack_from("<I", blob, 6)
    offset = 10
    meta = None
    if meta_len:
        try:
            meta = json.loads(blob[offset : offset + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad metadata block: {exc}") from exc
        offset += meta_len
    rows, cols = struct.unpack_from("<II", blob, offset)
    offset += 8
    expected = offset + 8 * rows * cols + 4
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} does not match header ({expected})")
    data = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
    return data.reshape(rows, cols).copy(), meta
