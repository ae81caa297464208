"""Binary container for named arrays: magic, length-prefixed JSON header, raw payload.

Layout::

    b"DVRMBOX1" | uint32 LE header length | UTF-8 JSON header | payload

The header lists ``arrays`` as ``{"name", "dtype", "shape"}`` records in payload
order plus a free-form ``meta`` object. Payload arrays are little-endian and
C-contiguous, concatenated without padding.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DVRMBOX1"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class ContainerError(ValueError):
    """Malformed, truncated or otherwise unreadable container data."""


@dataclass
class Container:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


def _dtype_name(arr: np.ndarray) -> str:
    for name, code in _DTYPES.items():
        if arr.dtype == np.dtype(code):
            return name
    raise ContainerError(f"unsupported dtype {arr.dtype}; use one of {sorted(_DTYPES)}")


def to_bytes(container: Container) -> bytes:
    entries, chunks = [], []
    for name, arr in container.arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "i":
            arr = arr.astype(np.int64)
        dname = _dtype_name(arr)
        entries.append({"name": name, "dtype": dname, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[dname]).tobytes())
    header = json.dumps({"arrays": entries, "meta": container.meta}, sort_keys=True, separators=(",", ":"))
    hb = header.encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks)


def from_bytes(blob: bytes) -> Container:
    if len(blob) < len(MAGIC) + 4:
        raise ContainerError(f"file too short ({len(blob)} bytes) to hold a container")
    if blob[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(blob):
        raise ContainerError(f"header claims {hlen} bytes but only {len(blob) - start} remain")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        entries = header["arrays"]
        meta = header.get("meta", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from None
    offset = start + hlen
    arrays = {}
    for entry in entries:
        try:
            name, dname, shape = entry["name"], entry["dtype"], tuple(int(s) for s in entry["shape"])
            code = _DTYPES[dname]
        except (KeyError, TypeError, ValueError) as exc:
            raise ContainerError(f"bad array entry {entry!r}: {exc}") from None
        if any(s < 0 for s in shape):
            raise ContainerError(f"array {name!r} has a negative dimension {shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(code).itemsize
        if offset + nbytes > len(blob):
            raise ContainerError(
                f"payload truncated: array {name!r} needs {nbytes} bytes, {len(blob) - offset} remain"
            )
        arr = np.frombuffer(blob, dtype=code, count=nbytes // np.dtype(code).itemsize, offset=offset)
        arrays[name] = arr.reshape(shape).astype(code)
        offset += nbytes
    if offset != len(blob):
        raise ContainerError(f"{len(blob) - offset} trailing bytes after the last array")
    return Container(arrays, meta)


def write_container(path, container: Container) -> None:
    blob = to_bytes(container)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_container(path) -> Container:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
