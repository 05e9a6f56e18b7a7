"""Little-endian tensor container shared by datasets (``BFMC``) and checkpoints (``BFMW``).

Layout::

    magic (4 bytes) | u32 schema_version | u64 manifest_length | manifest (UTF-8 JSON)
    { u8 dtype | u8 rank | u32 dim * rank | payload } * n_tensors
    u32 CRC32 of every preceding byte

The manifest carries a ``"tensors"`` list naming the blocks in order.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

# dtype code 1 (f32) is the base format; 2 and 3 hold checkpoints and masks.
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODE_OF = {v: k for k, v in DTYPE_CODES.items()}


class ContainerError(ValueError):
    """Malformed container file."""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


def encode(magic: bytes, manifest: dict, tensors: dict[str, np.ndarray],
           version: int = SCHEMA_VERSION) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    manifest = dict(manifest, tensors=list(tensors))
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [magic, struct.pack("<IQ", version, len(head)), head]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt == np.bool_:
            arr, dt = arr.astype("u1"), np.dtype("u1")
        code = _CODE_OF.get(np.dtype(dt))
        if code is None:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes, magic: bytes, version: int = SCHEMA_VERSION) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {blob[:4]!r}")
    if len(blob) < 4 + 12 + 4:
        raise TruncatedFileError("file shorter than its fixed header")
    found, mlen = struct.unpack_from("<IQ", blob, 4)
    if found != version:
        raise VersionMismatchError(f"schema_version {found} not supported (expected {version})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    crc_ok = zlib.crc32(body) == crc
    try:
        manifest, tensors = _parse(body, mlen)
    except TruncatedFileError:
        raise
    except ContainerError as exc:
        if not crc_ok:
            raise ChecksumError("CRC32 mismatch") from exc
        raise
    if not crc_ok:
        raise ChecksumError("CRC32 mismatch")
    return manifest, tensors


def _parse(body: bytes, mlen: int) -> tuple[dict, dict[str, np.ndarray]]:
    off = 16 + mlen
    if off > len(body):
        raise TruncatedFileError("manifest runs past end of file")
    try:
        manifest = json.loads(body[16:off].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ContainerError("manifest is not a JSON object")
    tensors: dict[str, np.ndarray] = {}
    for name in manifest.get("tensors", []):
        if off + 2 > len(body):
            raise TruncatedFileError(f"tensor {name!r} header missing")
        code, rank = struct.unpack_from("<BB", body, off)
        off += 2
        if code not in DTYPE_CODES:
            raise ContainerError(f"tensor {name!r}: unknown dtype code {code}")
        if off + 4 * rank > len(body):
            raise TruncatedFileError(f"tensor {name!r} shape missing")
        shape = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        dt = DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(body):
            raise TruncatedFileError(f"tensor {name!r} payload truncated")
        tensors[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize,
                                      offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(body):
        raise ContainerError(f"{len(body) - off} trailing bytes after last tensor")
    return manifest, tensors


def write(path, magic: bytes, manifest: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = encode(magic, manifest, tensors)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode(fh.read(), magic)
