"""Deterministic binary container for named float64 tensors plus a JSON header.

Layout::

    magic (8 bytes) | version (uint32 LE) | header length (uint64 LE)
    | header (UTF-8 JSON, sorted keys) | tensor data (float64 LE, C order)
    | SHA-256 of everything before it (32 bytes)

The header lists every tensor as ``[name, shape, offset]`` with offsets in
elements from the start of the data block.  No timestamps are stored, so
the same content always serializes to the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveError, ChecksumError, FormatVersionError

MAGIC = b"ATFTARC\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def dumps(meta: dict, tensors: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        index.append([name, list(arr.shape), offset])
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True,
                        separators=(",", ":"), allow_nan=False).encode("utf-8")
    body = _PREFIX.pack(MAGIC, version, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < _PREFIX.size + 32:
        raise ChecksumError("archive truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("archive checksum mismatch (corrupted or truncated)")
    magic, version, hlen = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise ArchiveError("not a model archive")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"archive format version {version}; this build reads "
                                 f"version {FORMAT_VERSION}")
    start = _PREFIX.size
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    data = np.frombuffer(body, dtype="<f8", offset=start + hlen)
    tensors = {}
    for name, shape, offset in header["tensors"]:
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = data[offset:offset + size].reshape(tuple(shape)).astype(float)
    return header["meta"], tensors


def write(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    blob = dumps(meta, tensors)
    Path(path).write_bytes(blob)
    return blob


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
