"""
Versioned binary container for fitted models.

Layout (all little-endian)::

    b"FHOP" | u32 format version | u64 payload length | payload | u32 CRC-32(payload)

The payload is a sequence of sections, each ``u16 name length | name |
u64 body length | body``. Bodies are written with :class:`SectionWriter`,
arrays carry an explicit dtype code and dims.
"""

import struct
import zlib
from typing import Dict, List, Sequence, Tuple

import numpy as np

from facehop.errors import (
    BadMagicError,
    ChecksumError,
    CorruptModelError,
    TruncatedModelError,
    UnsupportedVersionError,
)

MAGIC = b"FHOP"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")
_NAME = struct.Struct("<H")
_LENGTH = struct.Struct("<Q")
_DTYPES = {b"f": np.dtype("<f8"), b"i": np.dtype("<i8")}


class SectionWriter:
    def __init__(self):
        self._parts: List[bytes] = []

    def int(self, value: int) -> "SectionWriter":
        self._parts.append(struct.pack("<q", int(value)))
        return self

    def float(self, value: float) -> "SectionWriter":
        self._parts.append(struct.pack("<d", float(value)))
        return self

    def text(self, value: str) -> "SectionWriter":
        raw = value.encode("utf-8")
        self._parts.append(_LENGTH.pack(len(raw)) + raw)
        return self

    def array(self, value: np.ndarray) -> "SectionWriter":
        value = np.asarray(value)
        code = b"i" if np.issubdtype(value.dtype, np.integer) else b"f"
        data = np.ascontiguousarray(value, dtype=_DTYPES[code])
        dims = struct.pack(f"<I{data.ndim}Q", data.ndim, *data.shape)
        self._parts.append(code + dims + data.tobytes())
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class SectionReader:
    def __init__(self, body: bytes, name: str = ""):
        self._body = body
        self._offset = 0
        self.name = name

    def _take(self, size: int) -> bytes:
        end = self._offset + size
        if end > len(self._body):
            raise TruncatedModelError(f"Section '{self.name}' ends unexpectedly")
        chunk = self._body[self._offset : end]
        self._offset = end
        return chunk

    def int(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def float(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        (size,) = _LENGTH.unpack(self._take(_LENGTH.size))
        return self._take(size).decode("utf-8")

    def array(self) -> np.ndarray:
        code = self._take(1)
        if code not in _DTYPES:
            raise CorruptModelError(f"Unknown array type {code!r} in section '{self.name}'")
        (ndim,) = struct.unpack("<I", self._take(4))
        shape = struct.unpack(f"<{ndim}Q", self._take(8 * ndim))
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self._take(count * dtype.itemsize), dtype=dtype)
        return data.reshape(shape).astype(dtype.newbyteorder("="))

    def done(self) -> None:
        if self._offset != len(self._body):
            raise CorruptModelError(f"Section '{self.name}' has trailing bytes")


def encode(sections: Sequence[Tuple[str, bytes]], version: int = FORMAT_VERSION) -> bytes:
    parts = []
    for name, body in sections:
        raw_name = name.encode("ascii")
        parts.append(_NAME.pack(len(raw_name)) + raw_name + _LENGTH.pack(len(body)) + body)
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    return _HEADER.pack(MAGIC, version, len(payload)) + payload + _CRC.pack(crc)


def decode(data: bytes) -> Dict[str, bytes]:
    data = bytes(data)
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError("Not a FaceHop model file (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedModelError("Model file header is truncated")
    _, version, length = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"Model format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    end = _HEADER.size + length
    if len(data) < end + _CRC.size:
        raise TruncatedModelError(
            f"Model file is truncated: {len(data)} bytes, expected {end + _CRC.size}"
        )
    if len(data) > end + _CRC.size:
        raise CorruptModelError("Model file has trailing bytes after the checksum")
    payload = data[_HEADER.size : end]
    (expected,) = _CRC.unpack_from(data, end)
    if zlib.crc32(payload) & 0xFFFFFFFF != expected:
        raise ChecksumError("Model file checksum mismatch")

    sections: Dict[str, bytes] = {}
    offset = 0
    while offset < len(payload):
        if offset + _NAME.size > len(payload):
            raise TruncatedModelError("Section header is truncated")
        (name_len,) = _NAME.unpack_from(payload, offset)
        offset += _NAME.size
        name = payload[offset : offset + name_len].decode("ascii")
        offset += name_len
        if offset + _LENGTH.size > len(payload):
            raise TruncatedModelError(f"Section '{name}' length is truncated")
        (size,) = _LENGTH.unpack_from(payload, offset)
        offset += _LENGTH.size
        if offset + size > len(payload):
            raise TruncatedModelError(f"Section '{name}' is truncated")
        sections[name] = payload[offset : offset + size]
        offset += size
    return sections
