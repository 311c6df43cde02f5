"""The ``.imrd`` container: one JSON header line followed by raw arrays.

Layout::

    {"arrays": {...}, "magic": "IMRD", "metadata": {...}, "version": 1}\\n
    <payload>

Every entry of ``arrays`` records ``dtype``, ``shape``, ``offset`` and
``nbytes``; offsets are relative to the first payload byte and, taken in
offset order, the entries tile the payload exactly.  Payload arrays are
little-endian and C-ordered.  Complex fields are stored as interleaved
float32 (real, imag) pairs, masks as uint8 and covariance diagonals as
float32.
"""

import json
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

__all__ = ["MAGIC", "VERSION", "ContainerError", "Imrd", "write_imrd", "read_imrd"]

MAGIC = "IMRD"
VERSION = 1

_STORAGE = {
    "complex64": np.dtype("<c8"),
    "float32": np.dtype("<f4"),
    "uint8": np.dtype("u1"),
}


class ContainerError(ValueError):
    """Malformed or inconsistent container."""


def _storage_kind(arr):
    if np.iscomplexobj(arr):
        return "complex64"
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "uint8"
    if np.issubdtype(arr.dtype, np.floating):
        return "float32"
    raise ContainerError(f"unsupported array dtype {arr.dtype}")


@dataclass
class Imrd:
    """In-memory container: named arrays plus JSON-serializable metadata."""

    arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        try:
            return self.arrays[name]
        except KeyError:
            raise KeyError(f"container has no array {name!r}; available: {sorted(self.arrays)}") from None

    def __contains__(self, name):
        return name in self.arrays


def _encode(imrd):
    entries, chunks, offset = {}, [], 0
    for name, arr in imrd.arrays.items():
        arr = np.asarray(arr)
        kind = _storage_kind(arr)
        raw = np.ascontiguousarray(arr, dtype=_STORAGE[kind]).tobytes()
        entries[name] = {"dtype": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    header = {"magic": MAGIC, "version": VERSION, "arrays": entries, "metadata": imrd.metadata}
    try:
        line = json.dumps(header, sort_keys=True, allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise ContainerError(f"metadata is not JSON-serializable: {exc}") from exc
    return line.encode("utf-8") + b"\n" + b"".join(chunks)


def write_imrd(path, arrays, metadata=None):
    """Write arrays (dict name -> ndarray) and metadata to ``path``."""
    data = _encode(Imrd(dict(arrays), dict(metadata or {})))
    with open(path, "wb") as fh:
        fh.write(data)


def _decode(blob):
    nl = blob.find(b"\n")
    if nl < 0:
        raise ContainerError("missing header terminator")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise ContainerError("not an IMRD container")
    if header.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {header.get('version')!r}")
    payload = memoryview(blob)[nl + 1 :]
    entries = header.get("arrays", {})
    try:
        order = sorted(entries, key=lambda k: int(entries[k]["offset"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError("bad array offsets") from exc
    arrays, expected = {}, 0
    for name in order:
        ent = entries[name]
        try:
            dtype = _STORAGE[ent["dtype"]]
            shape = tuple(int(s) for s in ent["shape"])
            offset, nbytes = int(ent["offset"]), int(ent["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ContainerError(f"bad entry for array {name!r}") from exc
        if offset != expected or nbytes != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise ContainerError(f"array {name!r} does not tile the payload")
        if offset + nbytes > len(payload):
            raise ContainerError(f"array {name!r} runs past the end of the file")
        arrays[name] = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        expected = offset + nbytes
    if expected != len(payload):
        raise ContainerError(f"{len(payload) - expected} trailing payload bytes")
    return Imrd(arrays, header.get("metadata", {}))


def read_imrd(path):
    """Read a container written by :func:`write_imrd`."""
    with open(path, "rb") as fh:
        return _decode(fh.read())
