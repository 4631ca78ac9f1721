"""XTSR binary tensor format.

Layout of one record::

    b"XTSR" | u8 version (=1) | u8 dtype (0=f32, 1=f64) | u8 ndim
    | ndim x little-endian u32 dims | row-major little-endian payload

An archive is a plain concatenation of records; names and order live in the
accompanying text manifest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"XTSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class XTSRFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise TypeError(f"XTSR stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("too many dimensions for XTSR")
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; return it and the next offset."""
    if len(buf) - offset < 7:
        raise XTSRFormatError("truncated header", offset)
    if buf[offset : offset + 4] != MAGIC:
        raise XTSRFormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}", offset)
    version, code, ndim = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise XTSRFormatError(f"unsupported version {version}", offset + 4)
    if code not in _DTYPES:
        raise XTSRFormatError(f"unknown dtype code {code}", offset + 5)
    pos = offset + 7
    if len(buf) - pos < 4 * ndim:
        raise XTSRFormatError("truncated shape", pos)
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dtype = _DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise XTSRFormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}", pos)
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def save(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise XTSRFormatError("trailing bytes after record", end)
    return arr


def save_archive(path, arrays) -> None:
    Path(path).write_bytes(b"".join(encode(a) for a in arrays))


def load_archive(path) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(buf):
        arr, pos = decode(buf, pos)
        out.append(arr)
    return out
