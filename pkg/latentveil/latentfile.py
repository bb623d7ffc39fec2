"""LatentFile: the binary on-disk form of a latent code.

Layout (little-endian)::

    magic   4 bytes  b"DBLT"
    version u16      1
    L       u32      rows
    D       u32      cols
    values  L·D × float64, row-major

Total length is exactly 14 + 8·L·D bytes.
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    BadMagicError,
    ImageIOError,
    TrailingDataError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .generator import LatentCode

log = logging.getLogger(__name__)

MAGIC = b"DBLT"
VERSION = 1
HEADER = struct.Struct("<4sHII")
HEADER_SIZE = HEADER.size  # 14

PathLike = Union[str, Path]


def file_length(rows: int, cols: int) -> int:
    return HEADER_SIZE + 8 * rows * cols


def encode_latent(w: LatentCode) -> bytes:
    return HEADER.pack(MAGIC, VERSION, w.rows, w.cols) + w.values.astype("<f8").tobytes()


def decode_latent(payload: bytes) -> LatentCode:
    if len(payload) < HEADER_SIZE:
        if not MAGIC.startswith(payload[:4]):
            raise BadMagicError(f"bad magic {payload[:4]!r}, expected {MAGIC!r}")
        raise TruncatedPayloadError(f"truncated payload: {len(payload)} bytes, header needs {HEADER_SIZE}")
    magic, version, rows, cols = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported LatentFile version {version} (expected {VERSION})")
    expected = file_length(rows, cols)
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"truncated payload: {len(payload)} bytes, {rows}×{cols} latent needs {expected}"
        )
    if len(payload) > expected:
        raise TrailingDataError(f"{len(payload) - expected} unexpected bytes after the latent values")
    values = np.frombuffer(payload, dtype="<f8", count=rows * cols, offset=HEADER_SIZE)
    return LatentCode(values.astype(np.float64).reshape(rows, cols))


def write_latent(w: LatentCode, path: PathLike) -> None:
    p = Path(path)
    try:
        p.write_bytes(encode_latent(w))
    except OSError as e:
        raise ImageIOError(f"cannot write latent to {p}: {e}", path=str(p)) from e
    log.debug("Wrote %s (%d×%d latent)", p, w.rows, w.cols)


def read_latent(path: PathLike) -> LatentCode:
    p = Path(path)
    try:
        payload = p.read_bytes()
    except OSError as e:
        raise ImageIOError(f"cannot read latent file {p}: {e}", path=str(p)) from e
    return decode_latent(payload)
