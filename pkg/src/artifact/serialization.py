"""Binary framing shared by every model file.

Layout: 4 magic bytes, format version, then blocks, then a CRC-32 of all
preceding bytes. Integers (including the CRC) and floats are little-endian
64-bit. Strings are a u64 byte length followed by UTF-8.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .exceptions import ChecksumMismatch, IoError, VersionMismatch

FORMAT_VERSION = 1

_U64 = struct.Struct("<Q")


class BlockWriter:
    def __init__(self):
        self.parts = []

    def raw(self, data: bytes):
        self.parts.append(bytes(data))

    def u64(self, value: int):
        self.parts.append(_U64.pack(int(value)))

    def string(self, text: str):
        data = text.encode("utf-8")
        self.u64(len(data))
        self.parts.append(data)

    def json(self, obj):
        self.string(json.dumps(obj, sort_keys=True))

    def array(self, name: str, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        self.string(name)
        self.u64(arr.ndim)
        for d in arr.shape:
            self.u64(d)
        self.parts.append(arr.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class BlockReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumMismatch("unexpected end of data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def string(self) -> str:
        return self._take(self.u64()).decode("utf-8")

    def json(self):
        return json.loads(self.string())

    def array(self):
        name = self.string()
        shape = tuple(self.u64() for _ in range(self.u64()))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(self._take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        return name, arr


def frame(magic: bytes, body: bytes) -> bytes:
    head = magic + _U64.pack(FORMAT_VERSION) + body
    return head + _U64.pack(zlib.crc32(head))


def unframe(magic: bytes, data: bytes) -> BlockReader:
    if data[:4] != magic:
        raise VersionMismatch(f"bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 20:
        raise ChecksumMismatch("file too short")
    head, tail = data[:-8], data[-8:]
    if zlib.crc32(head) != _U64.unpack(tail)[0]:
        raise ChecksumMismatch("CRC-32 mismatch (truncated or corrupted file)")
    version = _U64.unpack(head[4:12])[0]
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    reader = BlockReader(head)
    reader.pos = 12
    return reader


def write_bytes(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc


def sniff_magic(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read(4)
    except OSError as exc:
        raise IoError(str(exc)) from exc
