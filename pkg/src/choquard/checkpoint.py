"""Versioned binary checkpoints for sampled fields.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"CHQCKPT\\0"
    8       4     format version (uint32), currently 1
    12      8     header length L in bytes (uint64)
    20      L     UTF-8 JSON header
    20+L    ...   payload: raw field arrays, back to back

The header records ``byte_order`` ("little"), the grid descriptor, the spec
hash, the iteration count, free-form metadata and a field table whose entries
give ``name``, ``dtype`` (always ``"<f8"``), ``shape``, ``offset`` and
``length`` (bytes, relative to the payload start).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, SpecHashMismatch, VersionMismatch

MAGIC = b"CHQCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    grid: dict
    fields: dict
    spec_hash: str
    iteration: int = 0
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def require_spec(self, spec_hash: str):
        if spec_hash != self.spec_hash:
            raise SpecHashMismatch("checkpoint was written for a different problem specification")


def save_checkpoint(path, ckpt: Checkpoint):
    """Write ``ckpt`` to ``path``; arrays are stored as little-endian float64."""
    table, blobs, offset = [], [], 0
    for name, arr in ckpt.fields.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        data = a.tobytes()
        table.append({"name": name, "dtype": "<f8", "shape": list(a.shape), "offset": offset,
                      "length": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "byte_order": "little",
        "grid": ckpt.grid,
        "spec_hash": ckpt.spec_hash,
        "iteration": int(ckpt.iteration),
        "meta": ckpt.meta,
        "fields": table,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hb)))
        fh.write(hb)
        for data in blobs:
            fh.write(data)


def load_checkpoint(path, expect_spec_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    VersionMismatch
        Wrong magic, unsupported version or an unreadable header.
    SpecHashMismatch
        ``expect_spec_hash`` is given and differs from the stored hash.
    CheckpointError
        Truncated payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size:
        raise VersionMismatch("file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC or version != VERSION:
        raise VersionMismatch(f"unsupported checkpoint format (magic={magic!r}, version={version})")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode())
        if header["byte_order"] != "little":
            raise ValueError("byte order")
        table = header["fields"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise VersionMismatch(f"unreadable checkpoint header: {exc}") from exc
    payload = blob[start + hlen:]
    fields = {}
    for ent in table:
        lo, n = ent["offset"], ent["length"]
        if ent["dtype"] != "<f8" or lo + n > len(payload):
            raise CheckpointError(f"field {ent['name']!r} is truncated or has an unknown dtype")
        fields[ent["name"]] = np.frombuffer(payload[lo:lo + n], dtype="<f8").reshape(ent["shape"]).copy()
    ckpt = Checkpoint(header["grid"], fields, header["spec_hash"], header["iteration"], header.get("meta", {}),
                      version)
    if expect_spec_hash is not None:
        ckpt.require_spec(expect_spec_hash)
    return ckpt
